#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hpdssm/corpus.hpp"
#include "hpdssm/engine.hpp"

namespace hpdssm {

struct EvalResult {
  double ppl = 0.0;
  double mean_nll = 0.0;
  double kl_from_clean = 0.0;
  std::size_t n_tokens = 0;
  std::size_t trial = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

/// One evaluation window [begin, end); targets at positions in
/// [first_target, end) are scored, each from the logits one step earlier.
struct Window {
  std::size_t begin;
  std::size_t end;
  std::size_t first_target;
};

/// Windows of `window` tokens advancing by `stride`. Each corpus position
/// after the first is scored at most once, by the first window that can
/// predict it.
inline std::vector<Window> plan_windows(std::size_t corpus_length, std::size_t window,
                                        std::size_t stride) {
  if (window < 2) throw ConfigError("evaluation window must be >= 2 tokens");
  if (stride < 1) throw ConfigError("evaluation stride must be >= 1");
  if (corpus_length < 2) throw ConfigError("corpus needs at least 2 tokens");
  std::vector<Window> plan;
  std::size_t scored_until = 1;  // first position not yet scored
  for (std::size_t begin = 0;; begin += stride) {
    const std::size_t end = std::min(begin + window, corpus_length);
    const std::size_t first = std::max(begin + 1, scored_until);
    if (end - begin >= 2 && first < end) {
      plan.push_back({begin, end, first});
      scored_until = end;
    }
    if (end == corpus_length) break;
  }
  return plan;
}

/// Clean-model log-probabilities at every scored position, for KL.
struct ReferenceLogProbs {
  std::size_t vocab = 0;
  std::vector<double> values;  // scored positions x vocab
};

class Evaluator {
public:
  Evaluator(const TokenCorpus& corpus, std::size_t window = 512, std::size_t stride = 512)
      : corpus_(corpus), plan_(plan_windows(corpus.tokens.size(), window, stride)) {}

  const std::vector<Window>& plan() const { return plan_; }

  std::size_t scored_positions() const {
    std::size_t n = 0;
    for (const auto& w : plan_) n += w.end - w.first_target;
    return n;
  }

  ReferenceLogProbs reference(const Checkpoint& ckpt) const {
    ReferenceLogProbs ref;
    ref.vocab = ckpt.config.vocab_size;
    ref.values.reserve(scored_positions() * ref.vocab);
    std::vector<double> row(ref.vocab);
    for_each_scored(ckpt, [&](std::span<const double> logits, Token) {
      log_softmax_into(logits, row);
      ref.values.insert(ref.values.end(), row.begin(), row.end());
    });
    return ref;
  }

  /// Perplexity of `ckpt`; KL(clean || ckpt) averaged over scored positions
  /// when a reference is supplied.
  EvalResult evaluate(const Checkpoint& ckpt, const ReferenceLogProbs* ref = nullptr) const {
    check_vocab(ckpt);
    if (ref && ref->vocab != ckpt.config.vocab_size) {
      throw ShapeError("reference log-probabilities use a different vocabulary");
    }
    double nll_sum = 0.0, kl_sum = 0.0;
    std::size_t pos = 0;
    std::vector<double> row(ckpt.config.vocab_size);
    for_each_scored(ckpt, [&](std::span<const double> logits, Token next) {
      log_softmax_into(logits, row);
      nll_sum += -row[next];
      if (ref) {
        const double* clean = ref->values.data() + pos * ref->vocab;
        double kl = 0.0;
        for (std::size_t v = 0; v < row.size(); ++v) kl += std::exp(clean[v]) * (clean[v] - row[v]);
        kl_sum += std::max(kl, 0.0);
      }
      ++pos;
    });
    EvalResult r;
    r.n_tokens = pos;
    r.mean_nll = nll_sum / double(pos);
    r.ppl = std::exp(r.mean_nll);
    r.kl_from_clean = ref ? kl_sum / double(pos) : 0.0;
    return r;
  }

private:
  void check_vocab(const Checkpoint& ckpt) const {
    if (corpus_.vocab_size > ckpt.config.vocab_size) {
      throw ConfigError("corpus vocabulary " + std::to_string(corpus_.vocab_size) +
                        " exceeds model vocabulary " + std::to_string(ckpt.config.vocab_size));
    }
  }

  template <typename Fn>
  void for_each_scored(const Checkpoint& ckpt, Fn&& fn) const {
    const std::span<const Token> all(corpus_.tokens);
    for (const Window& w : plan_) {
      const auto tokens = all.subspan(w.begin, w.end - w.begin);
      const Tensor logits = model_forward(ckpt, tokens);
      for (std::size_t p = w.first_target; p < w.end; ++p)
        fn(logits.row(p - 1 - w.begin), all[p]);
    }
  }

  const TokenCorpus& corpus_;
  std::vector<Window> plan_;
};

inline EvalResult perplexity(const Checkpoint& ckpt, const TokenCorpus& corpus,
                             std::size_t window = 512, std::size_t stride = 512) {
  return Evaluator(corpus, window, stride).evaluate(ckpt);
}

struct RatioInput {
  double ppl_clean_original;
  double ppl_noise_original;
  double ppl_noise_ours;
};

/// 1 - (ours - clean) / (noisy - clean). Unclipped.
inline double robustness_ratio(const RatioInput& in) {
  const double denom = in.ppl_noise_original - in.ppl_clean_original;
  if (denom == 0.0 || !std::isfinite(denom)) {
    throw DegenerateInputError("robustness ratio: noisy and clean perplexities coincide");
  }
  return 1.0 - (in.ppl_noise_ours - in.ppl_clean_original) / denom;
}

}  // namespace hpdssm
