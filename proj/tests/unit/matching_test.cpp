#include <cmath>

#include <gtest/gtest.h>

#include "moelink/error.hpp"
#include "moelink/matching.hpp"
#include "moelink/random.hpp"

namespace moelink::matching {
namespace {

Matrix RandomMatrix(Eigen::Index r, Eigen::Index c, Rng& rng, double s = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.Normal();
  return m;
}

FeatureBundle Bundle(const Matrix& fine, const Mask& mask, Modality mod) {
  FeatureBundle b;
  b.fine = fine;
  b.mask = mask;
  b.modality = mod;
  b.coarse = RowVector::Zero(fine.cols());
  int n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      b.coarse += fine.row(static_cast<Eigen::Index>(i));
      ++n;
    }
  }
  if (n > 0) b.coarse /= n;
  return b;
}

double Fine(AttentionParams& p, const Matrix& he_fine, const Mask& he_mask,
            const Matrix& hm_fine, const Mask& hm_mask, const RowVector& h_e) {
  ad::Tape t(false);
  Binder bind(t);
  return FineMatch(bind, p, t.Constant(he_fine), he_mask, t.Constant(hm_fine),
                   hm_mask, t.Constant(h_e))
      .score.scalar();
}

TEST(CoarseMatch, DotProducts) {
  ad::Tape t(false);
  EXPECT_DOUBLE_EQ(CoarseMatch(t.Constant(Matrix{{1.0, 2.0}}),
                               t.Constant(Matrix{{3.0, 4.0}})).scalar(), 11.0);
  EXPECT_DOUBLE_EQ(CoarseMatch(t.Constant(Matrix{{0.6, 0.8}}),
                               t.Constant(Matrix{{0.6, 0.8}})).scalar(), 1.0);
  EXPECT_DOUBLE_EQ(CoarseMatch(t.Constant(Matrix{{1.0, 0.0}}),
                               t.Constant(Matrix{{0.0, 1.0}})).scalar(), 0.0);
  EXPECT_THROW(CoarseMatch(t.Constant(Matrix{{1.0, 0.0}}),
                           t.Constant(Matrix{{1.0, 0.0, 0.0}})),
               ShapeError);
}

TEST(FineMatch, SingleKeyTakesThatRow) {
  Rng rng(1);
  AttentionParams id = AttentionParams::Identity(4);
  Matrix he = RandomMatrix(1, 4, rng), hm = RandomMatrix(1, 4, rng);
  RowVector h_e = RandomMatrix(1, 4, rng);
  EXPECT_NEAR(Fine(id, he, {true}, hm, {true}, h_e), h_e.dot(hm.row(0)), 1e-14);
}

TEST(FineMatch, ZeroValueProjectionScoresZero) {
  Rng rng(2);
  AttentionParams p(4, rng);
  p.wv.value.setZero();
  EXPECT_EQ(Fine(p, RandomMatrix(3, 4, rng), Mask(3, true), RandomMatrix(5, 4, rng),
                 Mask(5, true), RandomMatrix(1, 4, rng)),
            0.0);
}

TEST(FineMatch, MatchesDirectFormula) {
  Rng rng(3);
  const int d = 5;
  AttentionParams p(d, rng);
  Matrix he = RandomMatrix(3, d, rng), hm = RandomMatrix(4, d, rng);
  Mask em{true, true, false}, mm{true, false, true, true};
  RowVector h_e = RandomMatrix(1, d, rng);
  // Oracle written out with plain loops.
  Matrix M = he * p.wq.value, K = hm * p.wk.value, V = hm * p.wv.value;
  RowVector g = RowVector::Zero(d);
  int rows = 0;
  for (int i = 0; i < 3; ++i) {
    if (!em[static_cast<std::size_t>(i)]) continue;
    std::vector<double> w(4, 0.0);
    double z = 0;
    for (int j = 0; j < 4; ++j) {
      if (!mm[static_cast<std::size_t>(j)]) continue;
      w[static_cast<std::size_t>(j)] = std::exp(M.row(i).dot(K.row(j)) / std::sqrt(d));
      z += w[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < 4; ++j) g += w[static_cast<std::size_t>(j)] / z * V.row(j);
    ++rows;
  }
  g /= rows;
  EXPECT_NEAR(Fine(p, he, em, hm, mm, h_e), h_e.dot(g), 1e-12);
}

TEST(FineMatch, PaddingIsInvisible) {
  Rng rng(4);
  AttentionParams p(4, rng);
  Matrix he = RandomMatrix(3, 4, rng), hm = RandomMatrix(4, 4, rng);
  Mask em{true, true, false}, mm{true, true, true, false};
  RowVector h_e = RandomMatrix(1, 4, rng);
  const double base = Fine(p, he, em, hm, mm, h_e);
  Matrix hm2 = hm, he2 = he;
  hm2.row(3) = RandomMatrix(1, 4, rng, 100.0);
  he2.row(2) = RandomMatrix(1, 4, rng, 100.0);
  EXPECT_EQ(Fine(p, he2, em, hm2, mm, h_e), base);
  // duplicate the padded mention row
  Matrix hm3(5, 4);
  hm3 << hm, hm.row(3);
  EXPECT_EQ(Fine(p, he, em, hm3, {true, true, true, false, false}, h_e), base);
}

TEST(FineMatch, AllMaskedKeysScoreZeroWithFlag) {
  Rng rng(5);
  AttentionParams p(4, rng);
  ad::Tape t(false);
  Binder bind(t);
  FineResult r = FineMatch(bind, p, t.Constant(RandomMatrix(2, 4, rng)), Mask(2, true),
                           t.Constant(RandomMatrix(3, 4, rng)), Mask(3, false),
                           t.Constant(RandomMatrix(1, 4, rng)));
  EXPECT_TRUE(r.no_valid_keys);
  EXPECT_EQ(r.score.scalar(), 0.0);
}

TEST(Attention, MaskedSoftmaxRowsSumToOne) {
  Rng rng(6);
  ad::Tape t(false);
  Mask m{true, false, true, true, false};
  Matrix a = ad::MaskedSoftmaxRows(t.Constant(RandomMatrix(4, 5, rng, 3.0)), m).value();
  for (Eigen::Index r = 0; r < 4; ++r) {
    EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-12);
    EXPECT_EQ(a(r, 1), 0.0);
    EXPECT_EQ(a(r, 4), 0.0);
  }
}

RowVector Gated(const RowVector& h, const Matrix& fine, const Mask& mask) {
  ad::Tape t(false);
  Binder bind(t);
  LayerNorm ln(static_cast<int>(h.size()));
  return GatedFuse(bind, t.Constant(h), t.Constant(fine), mask, ln).value();
}

RowVector Normalize(const RowVector& x) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  return ((x.array() - mu) / std::sqrt(var + 1e-5)).matrix();
}

TEST(GatedFuse, ZeroGateAveragesUnmaskedPatches) {
  Rng rng(7);
  Matrix fine = RandomMatrix(4, 6, rng);
  Mask mask{true, true, false, true};
  RowVector mean = (fine.row(0) + fine.row(1) + fine.row(3)) / 3.0;
  EXPECT_TRUE(Gated(RowVector::Zero(6), fine, mask).isApprox(Normalize(mean), 1e-12));
}

TEST(GatedFuse, SinglePatchIgnoresGateForPooling) {
  Rng rng(8);
  Matrix fine = RandomMatrix(1, 6, rng);
  RowVector h = RandomMatrix(1, 6, rng);
  RowVector gated = h.array().tanh() * h.array();
  EXPECT_TRUE(Gated(h, fine, {true}).isApprox(Normalize(gated + fine.row(0)), 1e-12));
}

TEST(GatedFuse, OutputIsStandardized) {
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    RowVector e = Gated(RandomMatrix(1, 8, rng, 5.0), RandomMatrix(3, 8, rng, 5.0),
                        Mask(3, true));
    EXPECT_NEAR(e.mean(), 0.0, 1e-5);
    EXPECT_NEAR((e.array() - e.mean()).square().mean(), 1.0, 1e-5);
  }
}

TEST(IntraScore, AveragesCoarseAndFine) {
  Rng rng(10);
  AttentionParams p(4, rng);
  FeatureBundle m = Bundle(RandomMatrix(3, 4, rng), {true, true, false}, Modality::kText);
  FeatureBundle e = Bundle(RandomMatrix(2, 4, rng), {true, true}, Modality::kText);
  IntraResult r = IntraScore(m, e, nullptr, p);
  EXPECT_NEAR(r.cm, e.coarse.dot(m.coarse), 1e-14);
  EXPECT_DOUBLE_EQ(r.s, (r.cm + r.fm) / 2.0);
  e.modality = Modality::kVisual;
  EXPECT_THROW(IntraScore(m, e, nullptr, p), ArgumentError);
}

TEST(IntraScore, IdentitySmoeReducesToRawMatching) {
  Rng rng(11);
  AttentionParams p(4, rng);
  smoe::SmoeBlock block(4, 2, 1, 1, 8, 4, rng);
  block.fuse = Mlp::Identity(4);
  for (auto& x : block.layers[0].experts) x = Mlp::Identity(4);
  FeatureBundle m = Bundle(RandomMatrix(3, 4, rng), Mask(3, true), Modality::kText);
  FeatureBundle e = Bundle(RandomMatrix(3, 4, rng), Mask(3, true), Modality::kText);
  IntraResult raw = IntraScore(m, e, nullptr, p);
  IntraResult via = IntraScore(m, e, &block, p);
  EXPECT_NEAR(raw.cm, via.cm, 1e-12);
  EXPECT_NEAR(raw.fm, via.fm, 1e-12);
}

TEST(IntraScore, PlaceholderImageRuns) {
  Rng rng(12);
  AttentionParams p(4, rng);
  smoe::SmoeBlock block(4, 3, 2, 1, 8, 4, rng);
  Matrix ph = Matrix::Zero(32, 4);
  ph.row(0) = RandomMatrix(1, 4, rng);
  Mask mask(32, false);
  mask[0] = true;
  FeatureBundle m = Bundle(ph, mask, Modality::kVisual);
  IntraResult r = IntraScore(m, m, &block, p);
  EXPECT_TRUE(std::isfinite(r.s));
}

TEST(InterScore, SymmetricInputsGiveEqualDirections) {
  Rng rng(13);
  smoe::SmoeBlock block(4, 2, 1, 1, 8, 4, rng);
  LayerNorm ln(4);
  // Text and visual bundles with the same content, shared parameters: the
  // two directions compute the same thing.
  Matrix f = RandomMatrix(3, 4, rng);
  FeatureBundle t = Bundle(f, Mask(3, true), Modality::kText);
  FeatureBundle v = Bundle(f, Mask(3, true), Modality::kVisual);
  InterResult r = InterScore(t, v, t, v, {&block, &block, &ln, &ln});
  EXPECT_NEAR(r.tvm, r.vtm, 1e-12);
  EXPECT_DOUBLE_EQ(r.s, (r.tvm + r.vtm) / 2.0);
}

TEST(InterScore, ZeroVisualFineStaysFinite) {
  Rng rng(14);
  LayerNorm a(4), b(4);
  FeatureBundle t = Bundle(RandomMatrix(3, 4, rng), Mask(3, true), Modality::kText);
  FeatureBundle v = Bundle(RandomMatrix(3, 4, rng), Mask(3, true), Modality::kVisual);
  InterResult base = InterScore(t, v, t, v, {nullptr, nullptr, &a, &b});
  FeatureBundle z = v;
  z.fine.setZero();
  InterResult zero = InterScore(t, z, t, z, {nullptr, nullptr, &a, &b});
  EXPECT_TRUE(std::isfinite(zero.tvm) && std::isfinite(zero.vtm));
  EXPECT_NE(zero.tvm, base.tvm);
  EXPECT_THROW(InterScore(v, t, t, v, {nullptr, nullptr, &a, &b}), ArgumentError);
}

}  // namespace
}  // namespace moelink::matching
