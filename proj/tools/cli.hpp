#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hpdssm/hpdssm.hpp"

namespace hpdssm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

struct NoiseFlags {
  std::string dist = "gaussian";
  std::string mode;
  double sigma = 0.0;
  std::vector<double> sigmas;
  std::vector<std::string> classes{"all"};
  std::vector<std::string> blocks{"all"};
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  bool hpd = false;
  std::string hpd_target = "lm_head";
  std::string hpd_rank = "full";
  std::size_t window = 512;
  std::size_t stride = 512;
  std::size_t workers = 1;
  std::string json_path;
  std::string csv_path;
  std::string model_id;
  bool per_block = false;
  bool per_class = false;
};

inline std::optional<std::size_t> parse_rank(const std::string& s) {
  if (s == "full") return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(s, &used);
    if (used == s.size() && v >= 1) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("rank must be \"full\" or a positive integer, got \"" + s + "\"");
}

inline std::set<LayerClass> parse_classes(const std::vector<std::string>& names) {
  std::set<LayerClass> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.insert(std::begin(kAllLayerClasses), std::end(kAllLayerClasses));
    } else {
      out.insert(parse_layer_class(n));
    }
  }
  if (out.empty()) throw ConfigError("no layer classes selected");
  return out;
}

inline std::optional<std::set<std::size_t>> parse_blocks(const std::vector<std::string>& items) {
  std::set<std::size_t> out;
  for (const auto& s : items) {
    if (s == "all") return std::nullopt;
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      out.insert(v);
    } catch (const std::exception&) {
      throw ConfigError("invalid block index \"" + s + "\"");
    }
  }
  if (out.empty()) throw ConfigError("no blocks selected");
  return out;
}

inline void add_noise_flags(CLI::App* cmd, NoiseFlags& f, bool sweep_mode) {
  cmd->add_option("--dist", f.dist, "gaussian | lognormal")->capture_default_str();
  cmd->add_option("--mode", f.mode,
                  "additive-range | additive-std | multiplicative (default by distribution)");
  if (sweep_mode) {
    cmd->add_option("--sigmas", f.sigmas, "comma-separated noise standard deviations")
        ->delimiter(',')
        ->required();
  } else {
    cmd->add_option("--sigma", f.sigma, "noise standard deviation")->capture_default_str();
  }
  cmd->add_option("--classes", f.classes, "layer classes or \"all\"")->delimiter(',');
  cmd->add_option("--blocks", f.blocks, "block indices or \"all\"")->delimiter(',');
  cmd->add_option("--trials", f.trials, "noise trials")->capture_default_str();
  cmd->add_option("--seed", f.seed, "master seed")->capture_default_str();
  cmd->add_flag("--hpd", f.hpd, "evaluate with the HPD-rewritten projection");
  cmd->add_option("--hpd-target", f.hpd_target, "projection rewritten by --hpd")
      ->capture_default_str();
  cmd->add_option("--hpd-rank", f.hpd_rank, "HPD rank: full | integer")->capture_default_str();
  cmd->add_option("--window", f.window, "evaluation window in tokens")->capture_default_str();
  cmd->add_option("--stride", f.stride, "window stride in tokens")->capture_default_str();
  cmd->add_option("--workers", f.workers, "parallel evaluation workers")->capture_default_str();
  cmd->add_option("--json", f.json_path, "write the report as JSON");
  cmd->add_option("--csv", f.csv_path, "write the trial rows as CSV");
  cmd->add_option("--model-id", f.model_id, "model label in reports (default: file stem)");
  if (sweep_mode) {
    cmd->add_flag("--per-block", f.per_block, "one selector per block");
    cmd->add_flag("--per-class", f.per_class, "one selector per layer class");
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io, "", "cannot write " + path);
  out << text;
  if (!out) throw FormatError(FormatErrc::io, "", "write failed for " + path);
}

inline int run_evaluation(const std::string& ckpt_path, const std::string& corpus_path,
                          const NoiseFlags& f, bool sweep_mode, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TokenCorpus corpus = load_corpus(corpus_path);

  SweepConfig cfg;
  cfg.model_id = f.model_id.empty() ? std::filesystem::path(ckpt_path).stem().string() : f.model_id;
  cfg.distribution = parse_distribution(f.dist);
  cfg.mode = f.mode.empty() ? default_mode(cfg.distribution) : parse_mode(f.mode);
  cfg.sigmas = sweep_mode ? f.sigmas : std::vector<double>{f.sigma};
  const auto classes = parse_classes(f.classes);
  const auto blocks = parse_blocks(f.blocks);
  if (f.per_block && f.per_class) throw ConfigError("--per-block and --per-class are exclusive");
  if (f.per_block) {
    if (blocks) throw ConfigError("--per-block conflicts with --blocks");
    cfg.selectors = per_block_selectors(ckpt.config, classes);
  } else if (f.per_class) {
    cfg.selectors = per_class_selectors(classes, blocks);
  } else {
    cfg.selectors = {TargetSelector{classes, blocks}};
  }
  cfg.seed = f.seed;
  cfg.trials = f.trials;
  cfg.hpd = f.hpd;
  cfg.placement = {f.hpd_target, parse_rank(f.hpd_rank)};
  cfg.window = f.window;
  cfg.stride = f.stride;
  cfg.workers = f.workers;

  const SweepReport report = sweep(ckpt, corpus, cfg);

  out << std::setprecision(10);
  out << "clean ppl=" << report.clean.ppl << " n_tokens=" << report.clean.n_tokens << '\n';
  for (const auto& a : report.aggregates) {
    out << a.selector << " sigma=" << a.sigma << " ppl=" << a.ppl_mean << " +/- " << a.ppl_stddev
        << " kl=" << a.kl_mean << " +/- " << a.kl_stddev << " trials=" << a.trials << '\n';
  }
  for (const auto& note : report.notes) out << "note: " << note << '\n';
  if (!f.csv_path.empty()) write_text(f.csv_path, to_csv(report));
  if (!f.json_path.empty()) write_text(f.json_path, to_json(report).dump(2) + "\n");
  return kOk;
}

inline int cmd_inspect(const std::string& path, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig& c = ckpt.config;
  out << "config: d_model=" << c.d_model << " n_layers=" << c.n_layers << " d_state=" << c.d_state
      << " d_conv=" << c.d_conv << " expand=" << c.expand << " dt_rank=" << c.dt_rank
      << " vocab_size=" << c.vocab_size << '\n';
  std::size_t params = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    out << "  " << name << ' ' << dims_to_string(t.dims()) << " max|w|="
        << max_abs(t.data()) << '\n';
    params += t.size();
  }
  out << "tensors: " << ckpt.tensors.size() << " parameters: " << params << '\n';
  for (const auto& [k, v] : ckpt.metadata) out << "meta " << k << " = " << v << '\n';
  return kOk;
}

/// Runs one command line (without the program name).
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mamba-style SSM inference with analog weight-noise simulation and HPD"};
  app.require_subcommand(1);

  std::string ckpt_path, corpus_path, out_path;

  auto* inspect = app.add_subcommand("inspect", "print config, tensors and metadata");
  inspect->add_option("checkpoint", ckpt_path)->required();

  ModelConfig toy_cfg;
  std::uint64_t toy_seed = 0;
  auto* gen = app.add_subcommand("gen-toy", "write a deterministic random checkpoint");
  gen->add_option("--d-model", toy_cfg.d_model)->capture_default_str();
  gen->add_option("--n-layers", toy_cfg.n_layers)->capture_default_str();
  gen->add_option("--d-state", toy_cfg.d_state)->capture_default_str();
  gen->add_option("--d-conv", toy_cfg.d_conv)->capture_default_str();
  gen->add_option("--expand", toy_cfg.expand)->capture_default_str();
  gen->add_option("--dt-rank", toy_cfg.dt_rank)->capture_default_str();
  gen->add_option("--vocab", toy_cfg.vocab_size)->capture_default_str();
  gen->add_option("--seed", toy_seed)->capture_default_str();
  gen->add_option("--out", out_path)->required();

  std::uint32_t corpus_vocab = 1024;
  std::size_t corpus_length = 2048;
  std::uint64_t corpus_seed = 0;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "write a uniformly random token corpus");
  gen_corpus->add_option("--vocab", corpus_vocab)->capture_default_str();
  gen_corpus->add_option("--length", corpus_length)->capture_default_str();
  gen_corpus->add_option("--seed", corpus_seed)->capture_default_str();
  gen_corpus->add_option("--out", out_path)->required();

  std::string target = "lm_head", rank = "full";
  auto* hpd_apply = app.add_subcommand("hpd-apply", "rewrite a projection as HPD factors");
  hpd_apply->add_option("checkpoint", ckpt_path)->required();
  hpd_apply->add_option("--target", target)->capture_default_str();
  hpd_apply->add_option("--rank", rank)->capture_default_str();
  hpd_apply->add_option("--out", out_path)->required();

  NoiseFlags eval_flags, sweep_flags;
  auto* eval = app.add_subcommand("eval", "perplexity and KL under one noise setting");
  eval->add_option("checkpoint", ckpt_path)->required();
  eval->add_option("corpus", corpus_path)->required();
  add_noise_flags(eval, eval_flags, false);

  auto* sweep_cmd = app.add_subcommand("sweep", "perplexity and KL over a noise grid");
  sweep_cmd->add_option("checkpoint", ckpt_path)->required();
  sweep_cmd->add_option("corpus", corpus_path)->required();
  add_noise_flags(sweep_cmd, sweep_flags, true);

  double clean = 0, noisy = 0, ours = 0;
  auto* ratio = app.add_subcommand("ratio", "robustness ratio from three perplexities");
  ratio->add_option("--clean", clean, "clean PPL of the original model")->required();
  ratio->add_option("--noisy", noisy, "noisy PPL of the original model")->required();
  ratio->add_option("--ours", ours, "noisy PPL with HPD")->required();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*inspect) return cmd_inspect(ckpt_path, out);
    if (*gen) {
      save_checkpoint(generate_toy(toy_cfg, toy_seed), out_path);
      out << "wrote " << out_path << '\n';
      return kOk;
    }
    if (*gen_corpus) {
      save_corpus(generate_corpus(corpus_vocab, corpus_length, corpus_seed), out_path);
      out << "wrote " << out_path << '\n';
      return kOk;
    }
    if (*hpd_apply) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const Checkpoint rewritten = apply_hpd(ckpt, {target, parse_rank(rank)});
      save_checkpoint(rewritten, out_path);
      out << "wrote " << out_path << " (" << *rewritten.hpd_target() << ", rank "
          << rewritten.metadata.at("hpd.rank") << ")\n";
      return kOk;
    }
    if (*eval) return run_evaluation(ckpt_path, corpus_path, eval_flags, false, out);
    if (*sweep_cmd) return run_evaluation(ckpt_path, corpus_path, sweep_flags, true, out);
    if (*ratio) {
      const double r = robustness_ratio({clean, noisy, ours});
      out << std::fixed << std::setprecision(4) << r << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.category()) {
      case Error::Category::usage: return kUsage;
      case Error::Category::io: return kIo;
      case Error::Category::numeric: return kNumeric;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  }
  return kUsage;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace hpdssm::cli
