#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "instseg/error.hpp"
#include "instseg/losses.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace instseg;
using namespace testing_support;

namespace {

constexpr LossVariant kAllVariants[] = {
    LossVariant::Baseline, LossVariant::Blob,           LossVariant::CC,
    LossVariant::IwlBlob,  LossVariant::IwlCC,          LossVariant::InvWeightGlobal,
    LossVariant::InvWeightLocal};
constexpr LossVariant kInstanceVariants[] = {LossVariant::Blob, LossVariant::CC,
                                             LossVariant::IwlBlob, LossVariant::IwlCC};

std::vector<std::uint8_t> binary(const LabelVolume& l, int c) {
  const BinaryMask m = one_vs_rest(l, c);
  return {m.data().begin(), m.data().end()};
}

WeightMap random_weights(Gen& g, const GridShape& s) {
  WeightMap w = WeightMap::uniform(s);
  for (auto& v : w.data) v = g.uniform(0.1, 5.0);
  return w;
}

DomainMask random_domain(Gen& g, const GridShape& s) {
  DomainMask d = DomainMask::full(s);
  for (auto& v : d.data) v = g.bernoulli(0.8) ? 1 : 0;
  return d;
}

// Two-class probabilities with class 1 at p1[i] and the rest
// of the mass goes to class 0.
ProbVolume two_class(const GridShape& s, const std::vector<double>& p1) {
  std::vector<double> d(2 * s.voxels());
  for (std::size_t i = 0; i < s.voxels(); ++i) {
    d[i] = 1.0 - p1[i];
    d[s.voxels() + i] = p1[i];
  }
  return ProbVolume(s, 2, std::move(d), true);
}

}  // namespace

// --- configuration -------------------------------------------------------

TEST(LossConfig, ValidatesRanges) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 0.0;
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), InputError);
  c = LossConfig{};
  c.ce_clip = 0.5;
  EXPECT_THROW(c.validate(), InputError);
  c = LossConfig{};
  c.weight_lo = 3.0;
  c.weight_hi = 2.0;
  EXPECT_THROW(c.validate(), InputError);
  c = LossConfig{};
  c.dice_smooth = -1.0;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(LossConfig, VariantNamesRoundTrip) {
  for (auto v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_EQ(variant_name(LossVariant::IwlBlob), "iwl_blob");
  EXPECT_EQ(variant_name(LossVariant::InvWeightLocal), "invweight_local");
  EXPECT_THROW(parse_variant("dice"), InputError);
  EXPECT_TRUE(is_instance_variant(LossVariant::CC));
  EXPECT_FALSE(is_instance_variant(LossVariant::InvWeightGlobal));
}

// --- basic terms ---------------------------------------------------------

TEST(SoftDice, PerfectPredictionHasZeroLoss) {
  const GridShape s(1, 1, 4);
  const std::vector<double> p{1, 0, 1, 1};
  const std::vector<std::uint8_t> t{1, 0, 1, 1};
  EXPECT_EQ(soft_dice(p, t, DomainMask::full(s), WeightMap::uniform(s), 0.0).value, 0.0);
}

TEST(SoftDice, HalfPredictionHandComputed) {
  const GridShape s(1, 1, 2);
  const TermResult r = soft_dice(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0},
                                 DomainMask::full(s), WeightMap::uniform(s), 0.0);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  // d/dp_i of 1 - 2I/U with I = p0, U = p0 + p1 + 1.
  EXPECT_DOUBLE_EQ(r.grad[0], -(2.0 * 2.0 - 2.0 * 0.5) / 4.0);
  EXPECT_DOUBLE_EQ(r.grad[1], 2.0 * 0.5 / 4.0);
}

TEST(SoftDice, RejectsNegativeWeights) {
  const GridShape s(1, 1, 2);
  WeightMap w = WeightMap::uniform(s);
  w.data[1] = -1.0;
  EXPECT_THROW(soft_dice(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0},
                         DomainMask::full(s), w, 0.0),
               InputError);
}

TEST(BinaryCe, PerfectPredictionIsClampFloor) {
  const GridShape s(1, 1, 3);
  const double clip = 1e-7;
  const TermResult r = binary_ce(std::vector<double>{1, 0, 1}, std::vector<std::uint8_t>{1, 0, 1},
                                 DomainMask::full(s), WeightMap::uniform(s), clip);
  EXPECT_NEAR(r.value, -std::log(1.0 - clip), 1e-15);
  for (double v : r.grad) EXPECT_EQ(v, 0.0);  // saturated
}

TEST(BinaryCe, HalfProbabilityGivesLogTwo) {
  Gen g(1);
  const GridShape s(2, 3, 4);
  std::vector<std::uint8_t> t(s.voxels());
  for (auto& v : t) v = g.bernoulli(0.5) ? 1 : 0;
  const TermResult r = binary_ce(std::vector<double>(s.voxels(), 0.5), t, DomainMask::full(s),
                                 random_weights(g, s), 1e-7);
  EXPECT_NEAR(r.value, std::log(2.0), 1e-15);
}

TEST(BinaryCe, EmptyDomainIsZero) {
  const GridShape s(1, 1, 3);
  DomainMask d = DomainMask::full(s);
  std::fill(d.data.begin(), d.data.end(), 0);
  const TermResult r = binary_ce(std::vector<double>{0.2, 0.3, 0.4}, std::vector<std::uint8_t>{1, 0, 1},
                                 d, WeightMap::uniform(s), 1e-7);
  EXPECT_EQ(r.value, 0.0);
  for (double v : r.grad) EXPECT_EQ(v, 0.0);
}

TEST(Terms, GradientsMatchFiniteDifferences) {
  Gen g(404);
  const double h = 1e-5, clip = 1e-7;
  for (int t = 0; t < 10; ++t) {
    const GridShape s = t == 0 ? GridShape(8, 8, 8) : random_shape(g, 8, true);
    std::vector<double> p(s.voxels());
    std::vector<std::uint8_t> y(s.voxels());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = g.uniform(0.01, 0.99);
      y[i] = g.bernoulli(0.4) ? 1 : 0;
    }
    const WeightMap w = random_weights(g, s);
    const DomainMask d = random_domain(g, s);
    const TermResult dice = soft_dice(p, y, d, w, 1e-5);
    const TermResult ce = binary_ce(p, y, d, w, clip);
    double worst_dice = 0.0, worst_ce = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      std::vector<double> up = p, down = p;
      up[i] += h;
      down[i] -= h;
      const double nd = (soft_dice(up, y, d, w, 1e-5).value - soft_dice(down, y, d, w, 1e-5).value) / (2 * h);
      const double nc = (binary_ce(up, y, d, w, clip).value - binary_ce(down, y, d, w, clip).value) / (2 * h);
      worst_dice = std::max(worst_dice, std::abs(dice.grad[i] - nd) /
                                            std::max({std::abs(dice.grad[i]), std::abs(nd), 1e-5}));
      worst_ce = std::max(worst_ce, std::abs(ce.grad[i] - nc) /
                                        std::max({std::abs(ce.grad[i]), std::abs(nc), 1e-5}));
      if (!d.data[i]) {
        EXPECT_EQ(dice.grad[i], 0.0);
        EXPECT_EQ(ce.grad[i], 0.0);
      }
    }
    EXPECT_LE(worst_dice, 1e-6) << "trial " << t;
    EXPECT_LE(worst_ce, 1e-6) << "trial " << t;
  }
}

// --- weights and domains ---------------------------------------------------

TEST(IwlWeight, FormulaAndClamps) {
  EXPECT_DOUBLE_EQ(iwl_weight(1000, 10), 100.0);
  EXPECT_DOUBLE_EQ(iwl_weight(100, 200), 1.0);
  EXPECT_DOUBLE_EQ(iwl_weight(4e9, 10), 2e5);
  EXPECT_THROW(iwl_weight(100, 0), InputError);
}

TEST(BlobDomain, ExcludesOtherComponents) {
  const GridShape s(4, 4, 4);
  std::vector<std::uint8_t> m(64, 0);
  for (int x = 0; x < 3; ++x) m[s.index(0, 0, x)] = 1;
  for (int x = 0; x < 4; ++x) m[s.index(3, 3, x)] = 1;
  m[s.index(3, 2, 0)] = 1;
  const ComponentSet cs = connected_components(BinaryMask(s, m));
  ASSERT_EQ(cs.num_components, 2);
  EXPECT_EQ(blob_domain(cs, 1).count(), 59u);
  EXPECT_EQ(blob_domain(cs, 2).count(), 61u);
  EXPECT_THROW(blob_domain(cs, 3), InputError);
  const ComponentSet single = connected_components(BinaryMask(s, std::vector<std::uint8_t>(64, 1)));
  EXPECT_EQ(blob_domain(single, 1).count(), 64u);
}

TEST(BlobDomain, SetAlgebraOnRandomCases) {
  Gen g(18);
  for (int t = 0; t < 20; ++t) {
    const GridShape s = random_shape(g, 9, false);
    const ComponentSet cs = connected_components(random_mask(g, s, 0.2));
    for (int k = 1; k <= cs.num_components; ++k) {
      const DomainMask d = blob_domain(cs, k);
      for (std::size_t i = 0; i < s.voxels(); ++i) {
        const int c = cs.component_map[i];
        EXPECT_EQ(d.data[i] != 0, c == 0 || c == k);
      }
    }
  }
}

TEST(IwlWeightMap, ScopeSelectsWeightedVoxels) {
  const GridShape s(1, 1, 10);
  std::vector<std::uint8_t> m(10, 0);
  m[0] = m[1] = 1;
  m[5] = 1;
  const ComponentSet cs = connected_components(BinaryMask(s, m));
  const DomainMask d = blob_domain(cs, 1);  // 9 voxels
  const WeightMap wc = iwl_weight_map(cs, 1, d, IwlScope::Component, 1.0, 2e5);
  EXPECT_DOUBLE_EQ(wc.data[0], 4.5);
  EXPECT_DOUBLE_EQ(wc.data[1], 4.5);
  EXPECT_DOUBLE_EQ(wc.data[2], 1.0);
  EXPECT_DOUBLE_EQ(wc.data[5], 1.0);
  const WeightMap wd = iwl_weight_map(cs, 1, d, IwlScope::Domain, 1.0, 2e5);
  EXPECT_DOUBLE_EQ(wd.data[2], 4.5);
  EXPECT_DOUBLE_EQ(wd.data[5], 1.0);
}

TEST(Shirokikh, HandExampleAndSumToN) {
  const GridShape s(1, 1, 100);
  std::vector<Label> d(100, 0);
  for (int i = 0; i < 10; ++i) d[static_cast<std::size_t>(i)] = 1;
  const LabelVolume l(s, 2, d);
  const ClassWeightMaps w = shirokikh_weights(l, WeightScope::Global);
  EXPECT_DOUBLE_EQ(w.for_class(1).data[0], 5.0);
  EXPECT_DOUBLE_EQ(w.for_class(1).data[50], 100.0 / 180.0);
  EXPECT_NEAR(std::accumulate(w.maps[0].data.begin(), w.maps[0].data.end(), 0.0), 100.0, 1e-12);
}

TEST(Shirokikh, AllBackgroundGivesUnitWeights) {
  const LabelVolume l(GridShape(2, 2, 2), 3, std::vector<Label>(8, 0));
  for (auto scope : {WeightScope::Global, WeightScope::Local}) {
    const ClassWeightMaps w = shirokikh_weights(l, scope);
    for (const auto& m : w.maps) {
      for (double v : m.data) EXPECT_EQ(v, 1.0);
    }
  }
}

TEST(Shirokikh, EqualComponentsShareMassEqually) {
  const GridShape s(1, 1, 12);
  std::vector<Label> d(12, 0);
  d[0] = d[1] = d[2] = 1;
  d[6] = d[7] = d[8] = 1;
  const ClassWeightMaps w = shirokikh_weights(LabelVolume(s, 2, d), WeightScope::Global);
  const auto& m = w.maps[0].data;
  EXPECT_DOUBLE_EQ(m[0], m[7]);
  EXPECT_NEAR(m[0] + m[1] + m[2], 12.0 / 3.0, 1e-12);
}

TEST(Shirokikh, WeightsSumToVoxelCountOnRandomVolumes) {
  Gen g(5);
  for (int t = 0; t < 30; ++t) {
    const GridShape s = random_shape(g, 9, false);
    const LabelVolume l = random_labels(g, s, 4, 8);
    const ClassWeightMaps global = shirokikh_weights(l, WeightScope::Global);
    ASSERT_EQ(global.maps.size(), 1u);
    const double n = static_cast<double>(s.voxels());
    EXPECT_NEAR(std::accumulate(global.maps[0].data.begin(), global.maps[0].data.end(), 0.0), n, 1e-9 * n);
    const ClassWeightMaps local = shirokikh_weights(l, WeightScope::Local);
    ASSERT_EQ(local.maps.size(), 4u);
    for (const auto& m : local.maps) {
      EXPECT_NEAR(std::accumulate(m.data.begin(), m.data.end(), 0.0), n, 1e-9 * n);
    }
  }
}

// --- global loss -----------------------------------------------------------

TEST(GlobalDcCe, OneHotCorrectIsNearZero) {
  Gen g(2);
  const GridShape s(3, 3, 3);
  const LabelVolume l = random_labels(g, s, 3, 5);
  std::vector<double> d(3 * s.voxels(), 0.0);
  for (std::size_t i = 0; i < s.voxels(); ++i) d[static_cast<std::size_t>(l[i]) * s.voxels() + i] = 1.0;
  const LossConfig cfg;
  const GlobalLossResult r = global_dc_ce(ProbVolume(s, 3, d, true), l, cfg);
  EXPECT_LE(r.value, 2.0 * -std::log(1.0 - cfg.ce_clip) + 1e-9);
}

TEST(GlobalDcCe, UniformTwoClassHandComputed) {
  const GridShape s(1, 2, 4);
  std::vector<Label> d(8, 0);
  for (int i = 0; i < 4; ++i) d[static_cast<std::size_t>(i)] = 1;
  LossConfig cfg;
  cfg.dice_smooth = 0.0;
  const GlobalLossResult r =
      global_dc_ce(ProbVolume(s, 2, std::vector<double>(16, 0.5), true), LabelVolume(s, 2, d), cfg);
  // dice = 2 * (4 * 0.5) / (4 + 4) = 0.5
  EXPECT_NEAR(r.dice, 0.5, 1e-15);
  EXPECT_NEAR(r.ce, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.value, 0.5 + std::log(2.0), 1e-15);
}

TEST(GlobalDcCe, MissingForegroundStillDefined) {
  const GridShape s(1, 1, 4);
  const LabelVolume l(s, 2, std::vector<Label>(4, 0));
  const GlobalLossResult r = global_dc_ce(ProbVolume(s, 2, std::vector<double>(8, 0.5), true), l, LossConfig{});
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.ce, std::log(2.0), 1e-15);
}

// --- instance loss ---------------------------------------------------------

TEST(InstanceLoss, MatchesTermByTermReference) {
  Gen g(61);
  for (int t = 0; t < 15; ++t) {
    const GridShape s = random_shape(g, 8, t % 2 == 0);
    const int c = static_cast<int>(g.integer(2, 4));
    const LabelVolume l = random_labels(g, s, c, 8);
    const ProbVolume p = random_probs(g, s, c, 2.0);
    for (auto v : kInstanceVariants) {
      LossConfig cfg;
      cfg.variant = v;
      const LossBreakdown b = instance_loss(p, l, cfg);
      const ReferenceLoss ref = reference_instance_loss(p, l, cfg);
      EXPECT_NEAR(b.total, ref.value, 1e-12 * std::max(1.0, ref.value));
      EXPECT_EQ(b.instance_value, b.total);
      for (std::size_t cls = 0; cls < ref.per_class.size(); ++cls) {
        ASSERT_EQ(b.per_class[cls].component_losses.size(), ref.per_class[cls].size());
        for (std::size_t k = 0; k < ref.per_class[cls].size(); ++k) {
          EXPECT_NEAR(b.per_class[cls].component_losses[k], ref.per_class[cls][k], 1e-12);
        }
      }
      for (std::size_t i = 0; i < ref.grad.data().size(); ++i) {
        EXPECT_NEAR(b.grad.data()[i], ref.grad.data()[i], 1e-12 * std::max(1.0, std::abs(ref.grad.data()[i])));
      }
    }
  }
}

TEST(InstanceLoss, AggregationArithmetic) {
  const std::vector<ClassLoss> pc{{1, 2, {0.2, 0.4}, 0.3}, {2, 1, {0.6}, 0.6}, {3, 0, {}, std::nullopt}};
  EXPECT_NEAR(aggregate_instance_losses(pc), 0.45, 1e-15);
}

TEST(InstanceLoss, ClassBalanceIgnoresComponentCounts) {
  for (double l : {0.1, 0.37, 1.4}) {
    const std::vector<ClassLoss> pc{{1, 5, std::vector<double>(5, l), l}, {2, 1, {l}, l}, {3, 0, {}, std::nullopt}};
    EXPECT_NEAR(aggregate_instance_losses(pc), l, 1e-15);
  }
}

TEST(InstanceLoss, StoredPartsReproduceValue) {
  Gen g(72);
  for (int t = 0; t < 20; ++t) {
    const GridShape s = random_shape(g, 8, true);
    const LabelVolume l = random_labels(g, s, 4, 8);
    const ProbVolume p = random_probs(g, s, 4, 2.0);
    for (auto v : kInstanceVariants) {
      LossConfig cfg;
      cfg.variant = v;
      const LossBreakdown b = combined_loss(p, l, cfg);
      EXPECT_NEAR(aggregate_instance_losses(b.per_class), b.instance_value, 1e-12);
      for (const auto& c : b.per_class) {
        EXPECT_EQ(c.mean.has_value(), c.num_components > 0);
        EXPECT_EQ(static_cast<int>(c.component_losses.size()), c.num_components);
      }
    }
  }
}

TEST(InstanceLoss, SingleComponentReducesToGlobalOneVsRest) {
  Gen g(3);
  for (int t = 0; t < 10; ++t) {
    const GridShape s(4, 5, 6, {g.uniform(0.5, 2), 1.0, g.uniform(0.5, 2)});
    std::vector<Label> d(s.voxels(), 0);
    const auto z0 = g.integer(0, 2), y0 = g.integer(0, 3), x0 = g.integer(0, 4);
    for (auto z = z0; z < z0 + 2; ++z)
      for (auto y = y0; y < y0 + 2; ++y)
        for (auto x = x0; x < x0 + 2; ++x) d[s.index(z, y, x)] = 1;
    const LabelVolume l(s, 2, d);
    const ProbVolume p = random_probs(g, s, 2, 2.0);
    const LossConfig base;
    const auto y = binary(l, 1);
    const double expect = soft_dice(p.channel(1), y, DomainMask::full(s), WeightMap::uniform(s), base.dice_smooth).value +
                          binary_ce(p.channel(1), y, DomainMask::full(s), WeightMap::uniform(s), base.ce_clip).value;
    for (auto v : kInstanceVariants) {
      LossConfig cfg;
      cfg.variant = v;
      cfg.weight_hi = 1.0;  // pins the inverse-size weight to 1
      EXPECT_NEAR(instance_loss(p, l, cfg).total, expect, 1e-12) << variant_name(v);
    }
  }
}

TEST(InstanceLoss, DomainWideWeightCancels) {
  Gen g(13);
  for (int t = 0; t < 10; ++t) {
    const GridShape s = random_shape(g, 8, false);
    const LabelVolume l = random_labels(g, s, 3, 6);
    const ProbVolume p = random_probs(g, s, 3, 2.0);
    for (auto pair : {std::pair{LossVariant::IwlBlob, LossVariant::Blob}, std::pair{LossVariant::IwlCC, LossVariant::CC}}) {
      LossConfig a, b;
      a.variant = pair.first;
      a.iwl_scope = IwlScope::Domain;
      a.dice_smooth = 0.0;
      b.variant = pair.second;
      b.dice_smooth = 0.0;
      EXPECT_NEAR(instance_loss(p, l, a).total, instance_loss(p, l, b).total, 1e-12);
    }
  }
}

TEST(InstanceLoss, DuplicatedComponentsKeepDiceMean) {
  // The soft Dice part of each per-component loss only sees the component
  // itself when the prediction is zero elsewhere, so copying a component
  // into empty space leaves the class mean unchanged.
  Gen g(44);
  for (int t = 0; t < 10; ++t) {
    const GridShape s(4, 4, 12);
    std::vector<Label> a(s.voxels(), 0), b;
    std::vector<double> pa(s.voxels(), 0.0);
    for (std::int64_t z = 1; z < 3; ++z)
      for (std::int64_t y = 0; y < 3; ++y)
        for (std::int64_t x = 0; x < 4; ++x) {
          if (!g.bernoulli(0.7)) continue;
          a[s.index(z, y, x)] = 1;
          pa[s.index(z, y, x)] = g.uniform(0.05, 0.95);
        }
    b = a;
    std::vector<double> pb = pa;
    for (std::size_t i = 0; i < s.voxels(); ++i) {
      const Index3 c = s.coords(i);
      if (c[2] >= 6) {
        b[i] = a[s.index(c[0], c[1], c[2] - 6)];
        pb[i] = pa[s.index(c[0], c[1], c[2] - 6)];
      }
    }
    const ComponentSet ca = connected_components(one_vs_rest(LabelVolume(s, 2, a), 1));
    const ComponentSet cb = connected_components(one_vs_rest(LabelVolume(s, 2, b), 1));
    if (ca.num_components == 0) continue;
    ASSERT_EQ(cb.num_components, 2 * ca.num_components);
    auto mean_dice = [&](const ComponentSet& cs, const std::vector<double>& p) {
      std::vector<std::uint8_t> y(s.voxels());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = cs.component_map[i] > 0;
      double sum = 0.0;
      for (int k = 1; k <= cs.num_components; ++k) {
        sum += soft_dice(p, y, blob_domain(cs, k), WeightMap::uniform(s), 1e-5).value;
      }
      return sum / cs.num_components;
    };
    EXPECT_NEAR(mean_dice(ca, pa), mean_dice(cb, pb), 1e-9);
  }
}

TEST(InstanceLoss, DuplicatedComponentsKeepLossForOneHotPrediction) {
  const GridShape s(3, 3, 10);
  std::vector<Label> a(s.voxels(), 0);
  a[s.index(1, 1, 1)] = a[s.index(1, 1, 2)] = a[s.index(1, 2, 1)] = 1;
  std::vector<Label> b = a;
  b[s.index(1, 1, 6)] = b[s.index(1, 1, 7)] = b[s.index(1, 2, 6)] = 1;
  auto onehot = [&](const std::vector<Label>& l) {
    std::vector<double> p(s.voxels());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = l[i] == 1 ? 1.0 : 0.0;
    return two_class(s, p);
  };
  LossConfig cfg;
  cfg.variant = LossVariant::Blob;
  const LossBreakdown la = instance_loss(onehot(a), LabelVolume(s, 2, a), cfg);
  const LossBreakdown lb = instance_loss(onehot(b), LabelVolume(s, 2, b), cfg);
  EXPECT_NEAR(*la.per_class[0].mean, *lb.per_class[0].mean, 1e-9);
}

TEST(InstanceLoss, NoComponentsGivesZero) {
  const GridShape s(2, 2, 2);
  const LabelVolume l(s, 3, std::vector<Label>(8, 0));
  LossConfig cfg;
  cfg.variant = LossVariant::CC;
  const LossBreakdown b = instance_loss(ProbVolume(s, 3, std::vector<double>(24, 1.0 / 3), true), l, cfg);
  EXPECT_EQ(b.total, 0.0);
  EXPECT_TRUE(b.active_classes.empty());
  for (double v : b.grad.data()) EXPECT_EQ(v, 0.0);
  cfg.variant = LossVariant::Baseline;
  EXPECT_THROW(instance_loss(ProbVolume(s, 3, std::vector<double>(24, 1.0 / 3), true), l, cfg), InputError);
}

TEST(InstanceLoss, BlobGradientVanishesOnClassesWithoutComponents) {
  Gen g(90);
  for (int t = 0; t < 10; ++t) {
    const GridShape s = random_shape(g, 7, false);
    std::vector<Label> d(s.voxels(), 0);
    for (auto& v : d) v = g.bernoulli(0.2) ? 2 : 0;  // class 1 and 3 absent
    const LabelVolume l(s, 4, d);
    const ProbVolume p = random_probs(g, s, 4, 2.0);
    LossConfig cfg;
    cfg.variant = LossVariant::Blob;
    const LossBreakdown b = instance_loss(p, l, cfg);
    for (int c : {0, 1, 3}) {
      for (double v : b.grad.channel(c)) EXPECT_EQ(v, 0.0);
    }
  }
}

// --- combined loss ---------------------------------------------------------

TEST(CombinedLoss, ZeroBetaEqualsBaselineExactly) {
  Gen g(17);
  for (int t = 0; t < 10; ++t) {
    const GridShape s = random_shape(g, 7, true);
    const LabelVolume l = random_labels(g, s, 3, 6);
    const ProbVolume p = random_probs(g, s, 3, 2.0);
    LossConfig base;
    base.alpha = g.uniform(0.5, 2.0);
    const LossBreakdown ref = combined_loss(p, l, base);
    for (auto v : kInstanceVariants) {
      LossConfig cfg = base;
      cfg.variant = v;
      cfg.beta = 0.0;
      const LossBreakdown b = combined_loss(p, l, cfg);
      EXPECT_EQ(b.total, ref.total);
      EXPECT_EQ(b.grad, ref.grad);
    }
  }
}

TEST(CombinedLoss, LinearInGlobalAndInstanceParts) {
  Gen g(23);
  for (int t = 0; t < 10; ++t) {
    const GridShape s = random_shape(g, 7, true);
    const LabelVolume l = random_labels(g, s, 4, 8);
    const ProbVolume p = random_probs(g, s, 4, 2.0);
    for (auto v : kInstanceVariants) {
      LossConfig cfg;
      cfg.variant = v;
      cfg.alpha = g.uniform(0.1, 3.0);
      cfg.beta = g.uniform(0.1, 3.0);
      const LossBreakdown b = combined_loss(p, l, cfg);
      const GlobalLossResult gl = global_dc_ce(p, l, cfg);
      const LossBreakdown in = instance_loss(p, l, cfg);
      EXPECT_NEAR(b.total, cfg.alpha * b.global_value + cfg.beta * b.instance_value, 1e-12);
      EXPECT_NEAR(b.global_value, gl.value, 1e-12);
      EXPECT_NEAR(b.instance_value, in.total, 1e-12);
      for (std::size_t i = 0; i < b.grad.data().size(); ++i) {
        EXPECT_NEAR(b.grad.data()[i], cfg.alpha * gl.grad.data()[i] + cfg.beta * in.grad.data()[i],
                    1e-12 * std::max(1.0, std::abs(b.grad.data()[i])));
      }
    }
  }
}

TEST(CombinedLoss, InverseWeightVariantsUseWeightedGlobal) {
  Gen g(29);
  const GridShape s(4, 4, 4);
  const LabelVolume l = random_labels(g, s, 3, 4);
  const ProbVolume p = random_probs(g, s, 3, 2.0);
  for (auto [v, scope] : {std::pair{LossVariant::InvWeightGlobal, WeightScope::Global},
                          std::pair{LossVariant::InvWeightLocal, WeightScope::Local}}) {
    LossConfig cfg;
    cfg.variant = v;
    cfg.alpha = 1.5;
    const ClassWeightMaps w = shirokikh_weights(l, scope);
    const LossBreakdown b = combined_loss(p, l, cfg);
    EXPECT_DOUBLE_EQ(b.total, 1.5 * global_dc_ce(p, l, cfg, &w).value);
    EXPECT_EQ(b.instance_value, 0.0);
  }
}

TEST(CombinedLoss, RecommendedConfigurationDoublesInstanceTerm) {
  Gen g(31);
  const GridShape s(5, 5, 5);
  const LabelVolume l = random_labels(g, s, 3, 6);
  const ProbVolume p = random_probs(g, s, 3, 2.0);
  LossConfig one, two;
  one.variant = two.variant = LossVariant::Blob;
  two.beta = 2.0;
  const LossBreakdown a = combined_loss(p, l, one), b = combined_loss(p, l, two);
  EXPECT_NEAR(b.total - a.total, a.instance_value, 1e-12);
}

TEST(CombinedLoss, GradientsMatchFiniteDifferencesForEveryVariant) {
  Gen g(7);
  const double h = 1e-5;
  for (int t = 0; t < 20; ++t) {
    const GridShape s = t == 0 ? GridShape(8, 8, 8) : random_shape(g, 8, true);
    const int c = static_cast<int>(g.integer(2, 4));
    const LabelVolume l = random_labels(g, s, c, 8);
    const ProbVolume p = random_probs(g, s, c, 2.0);
    for (auto v : kAllVariants) {
      for (double beta : {1.0, 2.0}) {
        LossConfig cfg;
        cfg.variant = v;
        cfg.beta = beta;
        const LossBreakdown b = combined_loss(p, l, cfg);
        const double margin = cfg.ce_clip + 2 * h;
        const FdResult r = fd_check(
            p, b.grad, [&](const ProbVolume& q) { return combined_loss(q, l, cfg).total; }, h, margin,
            1.0 - margin, 1e-5);
        EXPECT_LE(r.max_rel, 1e-5) << variant_name(v) << " trial " << t;
        EXPECT_GT(r.checked, 0u);
      }
    }
  }
}

// --- serialization ---------------------------------------------------------

TEST(Breakdown, JsonAndCsvCarryAllParts) {
  const GridShape s(1, 1, 6);
  const LabelVolume l(s, 3, {1, 0, 1, 0, 2, 0});
  const ProbVolume p(s, 3, std::vector<double>(18, 1.0 / 3), true);
  LossConfig cfg;
  cfg.variant = LossVariant::CC;
  const LossBreakdown b = combined_loss(p, l, cfg);
  const auto j = nlohmann::json::parse(breakdown_to_json(b));
  EXPECT_EQ(j["variant"], "cc");
  EXPECT_EQ(j["per_class"]["1"]["K"], 2);
  EXPECT_EQ(j["per_class"]["2"]["K"], 1);
  EXPECT_EQ(j["active_classes"], nlohmann::json::array({1, 2}));
  EXPECT_DOUBLE_EQ(j["total"].get<double>(), b.total);
  const std::string csv = breakdown_to_csv(b);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,component,loss");
  EXPECT_NE(csv.find("\n1,2,"), std::string::npos);
  EXPECT_NE(csv.find("\ntotal,,"), std::string::npos);
}
