#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace brickseq::cli {

// args excludes the program name. Results go to `out`, logs and usage errors
// to `err`. Returns 0 on success, 1 on a domain failure, 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace brickseq::cli
