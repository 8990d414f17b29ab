#include "brickseq/cli.hpp"

int main(int argc, char** argv) { return brickseq::cli::dispatch(argc, argv); }
