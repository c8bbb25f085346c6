#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hpdssm/hpd.hpp"
#include "hpdssm/perturb.hpp"
#include "hpdssm/toy.hpp"
#include "oracles.hpp"

using namespace hpdssm;

namespace {

ModelConfig eight_layer_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 8;
  c.d_state = 2;
  c.d_conv = 2;
  c.expand = 2;
  c.dt_rank = 1;
  c.vocab_size = 16;
  return c;
}

NoiseSpec spec_of(NoiseDistribution d, NoiseMode m, double sigma, std::uint64_t trial = 0) {
  NoiseSpec s;
  s.distribution = d;
  s.mode = m;
  s.sigma = sigma;
  s.seed = 77;
  s.trial = trial;
  return s;
}

const std::pair<NoiseDistribution, NoiseMode> kValidModes[] = {
    {NoiseDistribution::gaussian, NoiseMode::additive_range},
    {NoiseDistribution::gaussian, NoiseMode::additive_std},
    {NoiseDistribution::gaussian, NoiseMode::multiplicative},
    {NoiseDistribution::lognormal, NoiseMode::multiplicative}};

Tensor uniform_tensor(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t({n});
  for (double& v : t.data()) v = dist(gen);
  return t;
}

}  // namespace

TEST(PerturbTensor, ZeroSigmaIsIdentityInEveryMode) {
  const Tensor w = uniform_tensor(500, -3, 3, 1);
  for (const auto& [d, m] : kValidModes) EXPECT_EQ(perturb_tensor(w, "w", spec_of(d, m, 0.0)), w);
}

TEST(PerturbTensor, LognormalPreservesSigns) {
  Tensor w = uniform_tensor(10000, -2, 2, 2);
  w[0] = 0.0;
  const Tensor p = perturb_tensor(w, "w", spec_of(NoiseDistribution::lognormal, NoiseMode::multiplicative, 0.5));
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(std::signbit(p[i]), std::signbit(w[i]));
    EXPECT_EQ(p[i] == 0.0, w[i] == 0.0);
  }
}

TEST(PerturbTensor, AdditiveRangeScale) {
  Tensor w = uniform_tensor(1000000, -1, 1, 3);
  w[17] = 2.0;  // max |w| = 2
  const Tensor p = perturb_tensor(w, "w", spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.05));
  std::vector<double> diff(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) diff[i] = p[i] - w[i];
  EXPECT_NEAR(population_stddev(diff), 0.1, 0.001);
}

TEST(PerturbTensor, AdditiveStdScale) {
  const Tensor w = uniform_tensor(1000000, -3, 3, 4);
  const double sd = population_stddev(w.data());
  const Tensor p = perturb_tensor(w, "w", spec_of(NoiseDistribution::gaussian, NoiseMode::additive_std, 0.02));
  std::vector<double> diff(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) diff[i] = p[i] - w[i];
  EXPECT_NEAR(population_stddev(diff), 0.02 * sd, 0.01 * 0.02 * sd);
}

TEST(PerturbTensor, MultiplicativeRelativeSpread) {
  const Tensor w = uniform_tensor(1000000, 0.5, 4, 5);
  const Tensor p = perturb_tensor(w, "w", spec_of(NoiseDistribution::gaussian, NoiseMode::multiplicative, 0.04));
  std::vector<double> rel(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) rel[i] = p[i] / w[i] - 1.0;
  EXPECT_NEAR(population_stddev(rel), 0.04, 0.0004);
}

TEST(PerturbTensor, MultiplicativeKeepsZeros) {
  Tensor w({100});
  for (std::size_t i = 0; i < 100; i += 2) w[i] = 1.0;
  for (NoiseDistribution d : {NoiseDistribution::gaussian, NoiseDistribution::lognormal}) {
    const Tensor p = perturb_tensor(w, "w", spec_of(d, NoiseMode::multiplicative, 0.3));
    for (std::size_t i = 1; i < 100; i += 2) EXPECT_EQ(p[i], 0.0);
  }
}

TEST(PerturbTensor, RejectsInvalidSpecs) {
  const Tensor w = uniform_tensor(10, -1, 1, 6);
  EXPECT_THROW(perturb_tensor(w, "w", spec_of(NoiseDistribution::lognormal, NoiseMode::additive_range, 0.1)),
               ConfigError);
  EXPECT_THROW(perturb_tensor(w, "w", spec_of(NoiseDistribution::lognormal, NoiseMode::additive_std, 0.1)),
               ConfigError);
  EXPECT_THROW(perturb_tensor(w, "w", spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, -0.1)),
               ConfigError);
  EXPECT_THROW(parse_distribution("uniform"), ConfigError);
  EXPECT_THROW(parse_mode("sideways"), ConfigError);
}

TEST(PerturbTensor, DeterministicPerNameAndTrial) {
  const Tensor w = uniform_tensor(256, -1, 1, 7);
  const auto s0 = spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.1, 0);
  const auto s1 = spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.1, 1);
  EXPECT_EQ(perturb_tensor(w, "a", s0), perturb_tensor(w, "a", s0));
  EXPECT_FALSE(perturb_tensor(w, "a", s0) == perturb_tensor(w, "a", s1));
  EXPECT_FALSE(perturb_tensor(w, "a", s0) == perturb_tensor(w, "b", s0));
}

TEST(PerturbTensor, CommonRandomNumbersAcrossSigma) {
  // Same (seed, trial, name) means the same eps; the offset scales linearly.
  const Tensor w = uniform_tensor(64, -1, 1, 8);
  const Tensor a = perturb_tensor(w, "w", spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.01));
  const Tensor b = perturb_tensor(w, "w", spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.03));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(b[i] - w[i], 3.0 * (a[i] - w[i]), 1e-12);
}

TEST(Classify, MapsNamesToRoles) {
  const std::optional<std::string> none;
  auto cls = [&](const std::string& n) { return classify_tensor(n, none); };
  EXPECT_EQ(cls("layers.3.in_proj.weight")->layer_class, LayerClass::in_proj);
  EXPECT_EQ(cls("layers.3.in_proj.weight")->block, 3u);
  EXPECT_EQ(cls("layers.0.A_log")->layer_class, LayerClass::A_log);
  EXPECT_EQ(cls("layers.1.norm.weight")->layer_class, LayerClass::norm);
  EXPECT_EQ(cls("norm_f.weight")->layer_class, LayerClass::norm);
  EXPECT_FALSE(cls("norm_f.weight")->block);
  EXPECT_EQ(cls("embedding.weight")->layer_class, LayerClass::embedding);
  for (const char* n : {"layers.0.conv1d.bias", "layers.0.dt_proj.bias", "layers.0.D", "hpd.v", "hpd.w_cim"})
    EXPECT_FALSE(cls(n)) << n;
  const auto w_cim = classify_tensor("hpd.w_cim", std::string("lm_head.weight"));
  ASSERT_TRUE(w_cim);
  EXPECT_EQ(w_cim->layer_class, LayerClass::lm_head);
  EXPECT_THROW(parse_layer_class("bias"), ConfigError);
}

TEST(PerturbCheckpoint, SingleTensorTargeted) {
  const Checkpoint ckpt = generate_toy(eight_layer_config(), 1);
  TargetSelector sel{{LayerClass::out_proj}, std::set<std::size_t>{5}};
  const Checkpoint p = perturb_checkpoint(ckpt, sel, spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.05));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name == "layers.5.out_proj.weight") {
      EXPECT_FALSE(p.at(name) == t);
    } else {
      EXPECT_EQ(p.at(name), t) << name;
    }
  }
  EXPECT_EQ(p.meta("perturb.selector"), "classes=out_proj;blocks=5");
}

TEST(PerturbCheckpoint, AllClassesZeroSigmaIsIdentity) {
  const Checkpoint ckpt = generate_toy(eight_layer_config(), 2);
  for (const auto& [d, m] : kValidModes) {
    const Checkpoint p = perturb_checkpoint(ckpt, TargetSelector::all(), spec_of(d, m, 0.0));
    EXPECT_EQ(p.tensors, ckpt.tensors);
  }
}

TEST(PerturbCheckpoint, UntargetedTensorsBitIdentical) {
  const Checkpoint ckpt = generate_toy(eight_layer_config(), 3);
  const Checkpoint p = perturb_checkpoint(ckpt, TargetSelector::all(),
                                          spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.1));
  for (const auto& [name, t] : ckpt.tensors) {
    if (!classify_tensor(name, std::nullopt)) {
      EXPECT_EQ(p.at(name), t) << name;
    } else {
      EXPECT_FALSE(p.at(name) == t) << name;
    }
  }
}

TEST(PerturbCheckpoint, GlobalTensorsMatchAnyBlockSelection) {
  const Checkpoint ckpt = generate_toy(eight_layer_config(), 4);
  TargetSelector sel{{LayerClass::lm_head, LayerClass::x_proj}, std::set<std::size_t>{2}};
  const auto names = selected_tensors(ckpt, sel);
  EXPECT_EQ(names, (std::vector<std::string>{"layers.2.x_proj.weight", "lm_head.weight"}));
}

TEST(PerturbCheckpoint, CompositionalDeterminism) {
  const Checkpoint ckpt = generate_toy(eight_layer_config(), 5);
  const auto spec = spec_of(NoiseDistribution::gaussian, NoiseMode::multiplicative, 0.07, 3);
  const TargetSelector a{{LayerClass::in_proj}, std::set<std::size_t>{1, 2}};
  const TargetSelector b{{LayerClass::dt_proj, LayerClass::embedding}, std::nullopt};
  const TargetSelector both{{LayerClass::in_proj, LayerClass::dt_proj, LayerClass::embedding}, std::nullopt};
  const Checkpoint seq = perturb_checkpoint(perturb_checkpoint(ckpt, a, spec), b, spec);
  const Checkpoint joint = perturb_checkpoint(ckpt, both, spec);
  for (const auto& name : selected_tensors(ckpt, a)) EXPECT_EQ(seq.at(name), joint.at(name));
  for (const auto& name : selected_tensors(ckpt, b)) EXPECT_EQ(seq.at(name), joint.at(name));
  EXPECT_EQ(perturb_checkpoint(ckpt, both, spec).tensors, joint.tensors);
}

TEST(PerturbCheckpoint, SelectionErrors) {
  const Checkpoint ckpt = generate_toy(eight_layer_config(), 6);
  const auto spec = spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.1);
  EXPECT_THROW(perturb_checkpoint(ckpt, TargetSelector{{}, std::nullopt}, spec), SelectionError);
  EXPECT_THROW(perturb_checkpoint(ckpt, TargetSelector{{LayerClass::in_proj}, std::set<std::size_t>{}}, spec),
               SelectionError);
  EXPECT_THROW(perturb_checkpoint(ckpt, TargetSelector{{LayerClass::in_proj}, std::set<std::size_t>{8}}, spec),
               ConfigError);
}

TEST(PerturbCheckpoint, HpdDigitalStageNeverTargeted) {
  const Checkpoint ckpt = apply_hpd(generate_toy(eight_layer_config(), 7), HpdPlacement{});
  const Checkpoint p = perturb_checkpoint(ckpt, TargetSelector::all(),
                                          spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.2));
  EXPECT_EQ(p.at(kHpdDigitalName), ckpt.at(kHpdDigitalName));
  EXPECT_FALSE(p.at(kHpdCimName) == ckpt.at(kHpdCimName));

  const auto only_head = perturb_checkpoint(ckpt, TargetSelector{{LayerClass::lm_head}, std::nullopt},
                                            spec_of(NoiseDistribution::gaussian, NoiseMode::additive_range, 0.2));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name != kHpdCimName) {
      EXPECT_EQ(only_head.at(name), t) << name;
    }
  }
}
