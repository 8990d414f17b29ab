#include "brickseq/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "brickseq/checkpoint.hpp"
#include "brickseq/datasets.hpp"
#include "brickseq/errors.hpp"
#include "brickseq/generate.hpp"
#include "brickseq/metrics.hpp"
#include "brickseq/oracle.hpp"
#include "brickseq/service.hpp"
#include "brickseq/train.hpp"
#include "brickseq/validity.hpp"

namespace brickseq::cli {

using nlohmann::json;

namespace {

// Subsystem tags for mix_seed so one --seed feeds independent streams.
enum SeedStream : std::uint64_t { kInitStream = 1, kTrainStream = 2, kEvalStream = 3, kMaskStream = 4 };

struct Globals {
  std::uint64_t seed = 1;
  std::string profile = "desk";
  std::string log_level = "info";
};

void configure_logging(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("brickseq", sink);
  logger->set_pattern("[%H:%M:%S] [%l] %v");
  logger->set_level(spdlog::level::from_str(level));
  spdlog::set_default_logger(logger);
}

AssemblySequence read_sequence(const std::filesystem::path& path) {
  const json j = load_json(path);
  if (j.is_array()) return j.get<AssemblySequence>();
  if (j.is_object() && j.contains("order")) return j.at("order").get<AssemblySequence>();
  throw MalformedStream(path.string() + ": expected an array or an object with \"order\"");
}

void emit(std::ostream& out, const json& j, const std::string& path) {
  if (path.empty()) {
    out << j.dump(2) << '\n';
  } else {
    save_json(path, j);
  }
}

GuidanceService* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brick assembly sequencing: ordering, training, evaluation and guidance"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--profile", g.profile, "Model size profile")
      ->check(CLI::IsMember({"desk", "paper", "tiny"}))
      ->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}))
      ->capture_default_str();

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "Write a synthetic model corpus");
  std::string gen_out;
  DatasetOptions dopts;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--models", dopts.models)->capture_default_str();
  gen->add_option("--seqs-per-model", dopts.sequences_per_model)->capture_default_str();
  gen->add_option("--n-min", dopts.n_min)->capture_default_str();
  gen->add_option("--n-max", dopts.n_max)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train the masked sequence model");
  std::string tr_data, tr_out;
  TrainConfig tc;
  tr->add_option("--data", tr_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--steps", tc.steps)->capture_default_str();
  tr->add_option("--lr", tc.learning_rate)->capture_default_str();
  tr->add_option("--batch", tc.batch_size)->capture_default_str();
  tr->add_option("--prefix-fraction", tc.prefix_fraction)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Score conditional generation against reference orders");
  std::string ev_ckpt, ev_data, ev_format = "json", ev_decode = "greedy", ev_split = "test", ev_out;
  EvalConfig ecfg;
  bool ev_f1 = false;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  ev->add_option("--prefix", ecfg.prefix_lengths, "Prefix lengths")->expected(1, -1);
  ev->add_option("--horizon", ecfg.horizon)->capture_default_str();
  ev->add_option("--format", ev_format)->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  ev->add_option("--decode", ev_decode)->check(CLI::IsMember({"greedy", "sampled"}))->capture_default_str();
  ev->add_option("--baseline-runs", ecfg.baseline_runs)->capture_default_str();
  ev->add_option("--beam", ecfg.generation.position_beam, "Position classes expanded per step")
      ->capture_default_str();
  ev->add_flag("--brick-only", ecfg.brick_only, "Score brick tokens only");
  ev->add_flag("--rouge-f1", ev_f1, "Report ROUGE F1 instead of recall");
  ev->add_option("--out", ev_out, "Write the grid to a file instead of stdout");

  // order
  auto* ord = app.add_subcommand("order", "Produce a valid assembly order with the rule-based oracle");
  std::string ord_model, ord_strategy = "det", ord_out;
  ord->add_option("model", ord_model)->required()->check(CLI::ExistingFile);
  ord->add_option("--strategy", ord_strategy)
      ->check(CLI::IsMember({"det", "rand", "adv", "deterministic", "randomized", "adversarial"}))
      ->capture_default_str();
  ord->add_option("--out", ord_out);

  // validate
  auto* val = app.add_subcommand("validate", "Check an assembly sequence against a model");
  std::string val_model, val_seq;
  val->add_option("model", val_model)->required()->check(CLI::ExistingFile);
  val->add_option("sequence", val_seq)->required()->check(CLI::ExistingFile);

  // serve
  auto* srv = app.add_subcommand("serve", "Run the interactive guidance service");
  std::string srv_host = "127.0.0.1", srv_ckpt, srv_snapshot;
  int srv_port = 8080;
  ServiceOptions sopts;
  srv->add_option("--port", srv_port)->capture_default_str();
  srv->add_option("--host", srv_host)->capture_default_str();
  srv->add_option("--checkpoint", srv_ckpt)->check(CLI::ExistingFile);
  srv->add_option("--k", sopts.default_k)->capture_default_str();
  srv->add_option("--snapshot", srv_snapshot, "Session snapshot file");
  srv->add_flag("--fallback-oracle", sopts.fallback_oracle);

  // bench
  auto* bn = app.add_subcommand("bench", "Time oracle ordering against model generation");
  std::string bn_model, bn_ckpt;
  int bn_synth = 100;
  bn->add_option("--model", bn_model)->check(CLI::ExistingFile);
  bn->add_option("--synth", bn_synth, "Size of a synthetic wall when --model is absent")->capture_default_str();
  bn->add_option("--checkpoint", bn_ckpt)->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  configure_logging(err, g.log_level);

  try {
    if (*gen) {
      dopts.seed = g.seed;
      write_dataset(gen_out, dopts);
      out << json{{"ok", true}, {"out", gen_out}, {"models", dopts.models}}.dump() << '\n';
      return 0;
    }

    if (*tr) {
      const LoadedDataset ds = load_dataset(tr_data);
      const LMConfig cfg = LMConfig::profile(g.profile, ds.vocab.size());
      tc.seed = mix_seed(g.seed, kTrainStream);
      LMParams init = LMParams::random(cfg, mix_seed(g.seed, kInitStream));
      spdlog::info("training {} profile: {} parameters, {} sequences, {} steps", g.profile, init.values().size(),
                   ds.train.size(), tc.steps);
      const auto t0 = std::chrono::steady_clock::now();
      TrainResult result = train(std::move(init), ds.train, ds.vocab, tc, {}, [&](std::size_t step, double loss) {
        if (step % 50 == 0) spdlog::info("step {} loss {:.4f}", step, loss);
      });
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      save_checkpoint(tr_out, result.params, &ds.vocab);
      json summary{{"ok", true}, {"checkpoint", tr_out}, {"seconds", seconds},
                   {"epoch_perplexity", result.epoch_perplexity},
                   {"final_loss", result.step_loss.empty() ? 0.0 : result.step_loss.back()}};
      if (!ds.val.empty())
        summary["val_perplexity"] = perplexity(result.params, ds.val, ds.vocab, mix_seed(g.seed, kMaskStream));
      out << summary.dump(2) << '\n';
      return 0;
    }

    if (*ev) {
      Checkpoint ck = load_checkpoint(ev_ckpt);
      const LoadedDataset ds = load_dataset(ev_data);
      auto vocab = std::make_shared<const Vocabulary>(ck.vocab ? *ck.vocab : ds.vocab);
      const auto& split = ev_split == "train" ? ds.manifest.train : ev_split == "val" ? ds.manifest.val : ds.manifest.test;
      std::vector<EvalCase> cases;
      for (std::size_t idx : split) {
        auto model = std::make_shared<const BrickModel>(ds.models.at(idx));
        cases.push_back({model, order_sequence(*model, 0, OrderStrategy::deterministic)});
      }
      ecfg.decode = ev_decode == "greedy" ? DecodeMode::greedy : DecodeMode::sampled;
      ecfg.rouge_form = ev_f1 ? RougeForm::f1 : RougeForm::recall;
      ecfg.seed = mix_seed(g.seed, kEvalStream);
      const EvalReport report = evaluate_conditional(ck.params, vocab, cases, ecfg);
      if (report.invalid_steps > 0) spdlog::error("{} generated steps failed validation", report.invalid_steps);
      if (ev_format == "csv") {
        if (ev_out.empty()) out << to_csv(report);
        else std::ofstream(ev_out) << to_csv(report);
      } else {
        emit(out, to_json(report, ecfg), ev_out);
      }
      return report.invalid_steps == 0 ? 0 : 1;
    }

    if (*ord) {
      const BrickModel model = load_model_file(ord_model);
      const auto order = order_sequence(model, g.seed, parse_strategy(ord_strategy));
      emit(out, json{{"model", model.name}, {"order", order}}, ord_out);
      return 0;
    }

    if (*val) {
      const BrickModel model = model_from_json(load_json(val_model));
      check_model_structure(model);
      const auto report = validate_sequence(read_sequence(val_seq), model);
      out << to_json(report).dump() << '\n';
      return report.ok ? 0 : 1;
    }

    if (*srv) {
      if (!srv_ckpt.empty()) sopts.checkpoint = srv_ckpt;
      if (!srv_snapshot.empty()) sopts.snapshot = srv_snapshot;
      GuidanceService service(std::move(sopts));
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const bool ok = service.listen(srv_host, srv_port);
      g_service = nullptr;
      if (!ok) spdlog::error("could not listen on {}:{}", srv_host, srv_port);
      return ok ? 0 : 1;
    }

    if (*bn) {
      const BrickModel loaded = bn_model.empty() ? synth_model(ModelKind::wall, bn_synth, g.seed)
                                                 : load_model_file(bn_model);
      auto model = std::make_shared<const BrickModel>(loaded);
      auto timed = [](auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      };
      AssemblySequence reference;
      OracleStats det_stats, adv_stats;
      const double det_s =
          timed([&] { reference = order_sequence(*model, g.seed, OrderStrategy::deterministic, {}, &det_stats); });
      const double adv_s =
          timed([&] { order_sequence(*model, g.seed, OrderStrategy::adversarial, {}, &adv_stats); });

      LMParams params;
      std::shared_ptr<const Vocabulary> vocab;
      if (!bn_ckpt.empty()) {
        Checkpoint ck = load_checkpoint(bn_ckpt);
        if (!ck.vocab) throw CheckpointError("checkpoint carries no vocabulary");
        params = std::move(ck.params);
        vocab = std::make_shared<const Vocabulary>(std::move(*ck.vocab));
      } else {
        vocab = std::make_shared<const Vocabulary>(
            Vocabulary::from_models(std::span<const BrickModel>(&loaded, 1), DiscretizationConfig{}));
        params = LMParams::random(LMConfig::profile(g.profile, vocab->size()), mix_seed(g.seed, kInitStream));
      }
      GenerationResult gen_result;
      const double model_s = timed([&] {
        gen_result = generate_conditional(params, model, vocab, reference, 0, model->size(), DecodeMode::greedy,
                                          mix_seed(g.seed, kEvalStream));
      });
      const bool valid = validate_sequence(gen_result.sequence, *model).ok;
      out << json{{"model", model->name},
                  {"bricks", model->size()},
                  {"oracle_det_seconds", det_s},
                  {"oracle_det_expansions", det_stats.expansions},
                  {"oracle_adv_seconds", adv_s},
                  {"oracle_adv_expansions", adv_stats.expansions},
                  {"model_seconds", model_s},
                  {"model_sequence_valid", valid},
                  {"model_truncated", gen_result.truncated}}
                 .dump(2)
          << '\n';
      return valid ? 0 : 1;
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace brickseq::cli
