#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpdssm/hpd.hpp"
#include "hpdssm/metrics.hpp"
#include "hpdssm/perturb.hpp"

namespace hpdssm {

struct SweepConfig {
  std::string model_id = "model";
  std::vector<double> sigmas{0.0};
  std::vector<TargetSelector> selectors{TargetSelector::all()};
  NoiseDistribution distribution = NoiseDistribution::gaussian;
  NoiseMode mode = NoiseMode::additive_range;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  bool hpd = false;
  HpdPlacement placement;
  std::size_t window = 512;
  std::size_t stride = 512;
  std::size_t workers = 1;
};

struct SweepRow {
  std::string model;
  std::string selector;
  NoiseDistribution distribution;
  NoiseMode mode;
  double sigma;
  std::size_t trial;
  std::uint64_t seed;
  bool hpd;
  EvalResult result;
};

struct SweepAggregate {
  std::string selector;
  double sigma;
  std::size_t trials;
  double ppl_mean, ppl_stddev;
  double kl_mean, kl_stddev;
};

struct SweepReport {
  EvalResult clean;
  std::vector<SweepRow> rows;
  std::vector<SweepAggregate> aggregates;
  std::vector<std::string> notes;
};

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_stddev(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / double(v.size() - 1))};
}

/// Per (selector, sigma) statistics over trials, in first-seen row order.
inline std::vector<SweepAggregate> aggregate_rows(const std::vector<SweepRow>& rows) {
  std::vector<SweepAggregate> out;
  std::vector<std::pair<std::string, double>> keys;
  for (const auto& r : rows) {
    const std::pair<std::string, double> key{r.selector, r.sigma};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [selector, sigma] : keys) {
    std::vector<double> ppl, kl;
    for (const auto& r : rows) {
      if (r.selector == selector && r.sigma == sigma) {
        ppl.push_back(r.result.ppl);
        kl.push_back(r.result.kl_from_clean);
      }
    }
    const auto [pm, ps] = mean_stddev(ppl);
    const auto [km, ks] = mean_stddev(kl);
    out.push_back({selector, sigma, ppl.size(), pm, ps, km, ks});
  }
  return out;
}

/// One selector per block, each restricted to `classes`.
inline std::vector<TargetSelector> per_block_selectors(const ModelConfig& cfg,
                                                       const std::set<LayerClass>& classes) {
  std::vector<TargetSelector> out;
  for (std::size_t b = 0; b < cfg.n_layers; ++b) out.push_back({classes, std::set<std::size_t>{b}});
  return out;
}

/// One selector per layer class, each over `blocks`.
inline std::vector<TargetSelector> per_class_selectors(
    const std::set<LayerClass>& classes, const std::optional<std::set<std::size_t>>& blocks) {
  std::vector<TargetSelector> out;
  for (LayerClass c : kAllLayerClasses)
    if (classes.count(c)) out.push_back({{c}, blocks});
  return out;
}

/// Evaluates every (selector, sigma, trial) grid point. Rows come back in
/// grid order whatever the worker count; each noise realization depends only
/// on (seed, trial, tensor name).
inline SweepReport sweep(const Checkpoint& ckpt, const TokenCorpus& corpus, const SweepConfig& cfg) {
  if (cfg.sigmas.empty() || cfg.selectors.empty()) throw ConfigError("sweep grid is empty");
  if (cfg.trials < 1) throw ConfigError("sweep needs at least one trial");
  NoiseSpec probe{cfg.distribution, cfg.mode, 0.0, cfg.seed, 0};
  probe.validate();
  for (double s : cfg.sigmas) {
    probe.sigma = s;
    probe.validate();
  }

  const Checkpoint base = cfg.hpd ? apply_hpd(ckpt, cfg.placement) : ckpt;
  const Evaluator evaluator(corpus, cfg.window, cfg.stride);
  const ReferenceLogProbs reference = evaluator.reference(base);

  SweepReport report;
  report.clean = evaluator.evaluate(base, &reference);

  struct Point {
    std::size_t selector, sigma, trial;
  };
  std::vector<Point> grid;
  for (std::size_t s = 0; s < cfg.selectors.size(); ++s)
    for (std::size_t g = 0; g < cfg.sigmas.size(); ++g)
      for (std::size_t t = 0; t < cfg.trials; ++t) grid.push_back({s, g, t});

  std::vector<SweepRow> rows(grid.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        const Point& p = grid[i];
        const NoiseSpec spec{cfg.distribution, cfg.mode, cfg.sigmas[p.sigma], cfg.seed, p.trial};
        const Checkpoint noisy = perturb_checkpoint(base, cfg.selectors[p.selector], spec);
        EvalResult r = evaluator.evaluate(noisy, &reference);
        r.trial = p.trial;
        rows[i] = {cfg.model_id, cfg.selectors[p.selector].describe(), cfg.distribution, cfg.mode,
                   spec.sigma,   p.trial, cfg.seed, cfg.hpd, r};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = grid.size();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(cfg.workers, 1, grid.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  report.rows = std::move(rows);
  report.aggregates = aggregate_rows(report.rows);
  if (cfg.distribution == NoiseDistribution::lognormal) {
    report.notes.push_back("lognormal noise is not mean-corrected: E[exp(sigma*eps)] = exp(sigma^2/2)");
  }
  return report;
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kCsvHeader = "model,selector,dist,mode,sigma,trial,seed,hpd,ppl,kl,n_tokens";

inline std::string to_csv(const SweepReport& report) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : report.rows) {
    out += r.model + ',' + r.selector + ',' + to_string(r.distribution) + ',' + to_string(r.mode) +
           ',' + format_real(r.sigma) + ',' + std::to_string(r.trial) + ',' +
           std::to_string(r.seed) + ',' + (r.hpd ? "1" : "0") + ',' + format_real(r.result.ppl) +
           ',' + format_real(r.result.kl_from_clean) + ',' + std::to_string(r.result.n_tokens) +
           '\n';
  }
  return out;
}

inline nlohmann::json to_json(const EvalResult& r) {
  return {{"ppl", r.ppl},
          {"mean_nll", r.mean_nll},
          {"kl_from_clean", r.kl_from_clean},
          {"n_tokens", r.n_tokens},
          {"trial", r.trial}};
}

inline nlohmann::json to_json(const SweepReport& report) {
  nlohmann::json j;
  j["clean"] = to_json(report.clean);
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row = to_json(r.result);
    row["model"] = r.model;
    row["selector"] = r.selector;
    row["dist"] = to_string(r.distribution);
    row["mode"] = to_string(r.mode);
    row["sigma"] = r.sigma;
    row["seed"] = r.seed;
    row["hpd"] = r.hpd;
    j["rows"].push_back(std::move(row));
  }
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : report.aggregates) {
    j["aggregates"].push_back({{"selector", a.selector},
                               {"sigma", a.sigma},
                               {"trials", a.trials},
                               {"ppl_mean", a.ppl_mean},
                               {"ppl_stddev", a.ppl_stddev},
                               {"kl_mean", a.kl_mean},
                               {"kl_stddev", a.kl_stddev}});
  }
  j["notes"] = report.notes;
  return j;
}

}  // namespace hpdssm
