// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "moelink/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "moelink/autodiff.hpp"
#include "moelink/error.hpp"
#include "moelink/matching.hpp"
#include "moelink/nn.hpp"
#include "moelink/random.hpp"
#include "moelink/smoe.hpp"
#include "moelink/training.hpp"

namespace moelink {

const char* ToString(GradComponent c) {
  switch (c) {
    case GradComponent::kProjection:
      return "projection";
    case GradComponent::kCoarseMatch:
      return "coarse_match";
    case GradComponent::kFineMatch:
      return "fine_match";
    case GradComponent::kGatedFuse:
      return "gated_fuse";
    case GradComponent::kContrastiveLoss:
      return "contrastive_loss";
    case GradComponent::kSmoe:
      return "smoe";
  }
  return "?";
}

GradComponent ParseGradComponent(std::string_view name) {
  static const std::map<std::string_view, GradComponent> kNames = {
      {"projection", GradComponent::kProjection},
      {"projections", GradComponent::kProjection},
      {"coarse_match", GradComponent::kCoarseMatch},
      {"fine_match", GradComponent::kFineMatch},
      {"gated_fuse", GradComponent::kGatedFuse},
      {"contrastive_loss", GradComponent::kContrastiveLoss},
      {"smoe", GradComponent::kSmoe},
      {"smoe_forward", GradComponent::kSmoe},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) {
    throw ArgumentError("unknown gradcheck component '" + std::string(name) + "'");
  }
  return it->second;
}

std::vector<GradComponent> AllGradComponents() {
  return {GradComponent::kProjection,  GradComponent::kCoarseMatch,
          GradComponent::kFineMatch,   GradComponent::kGatedFuse,
          GradComponent::kContrastiveLoss, GradComponent::kSmoe};
}

namespace {

Matrix Gaussian(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = sd * rng.Normal();
  }
  return m;
}

// A component under test: named tensors (parameters and inputs alike)
// and a forward pass producing any-shaped output.
struct Case {
  std::vector<std::pair<std::string, Tensor*>> tensors;
  std::function<ad::Var(Binder&)> forward;
};

double Probe(const Case& c, const Matrix& weights) {
  ad::Tape tape(false);
  Binder bind(tape);
  const ad::Var out = c.forward(bind);
  return out.value().cwiseProduct(weights).sum();
}

}  // namespace

GradCheckResult GradCheck(GradComponent component,
                          const GradCheckOptions& o) {
  if (!(o.eps >= 1e-6 && o.eps <= 1e-3)) {
    throw ArgumentError("gradcheck: eps must lie in [1e-6, 1e-3]");
  }
  if (o.dim < 1 || o.rows < 1) throw ArgumentError("gradcheck: dims must be >= 1");
  Rng rng(MixSeed(o.seed, Fnv1a64(ToString(component))));
  const int d = o.dim, L = o.rows;

  // Storage that outlives the forward closures.
  std::map<std::string, Tensor> store;
  auto add = [&](const std::string& name, Matrix v) -> Tensor& {
    return store[name] = Tensor(std::move(v));
  };
  Case c;
  Mask mask(static_cast<std::size_t>(L), true);
  if (L > 1) mask.back() = false;  // exercise a padded row
  LayerNorm norm;
  Mlp fuse;
  std::vector<smoe::SmoeLayer> layers;
  smoe::Routing routing;
  bool have_routing = false;

  switch (component) {
    case GradComponent::kProjection: {
      Tensor& w = add("weight", Gaussian(2 * d, d, rng));
      Tensor& x = add("input", Gaussian(L, 2 * d, rng));
      c.forward = [&w, &x](Binder& b) { return ad::MatMul(b(x), b(w)); };
      break;
    }
    case GradComponent::kCoarseMatch: {
      Tensor& he = add("h_e", Gaussian(1, d, rng));
      Tensor& hm = add("h_m", Gaussian(1, d, rng));
      c.forward = [&he, &hm](Binder& b) {
        return matching::CoarseMatch(b(he), b(hm));
      };
      break;
    }
    case GradComponent::kFineMatch: {
      matching::AttentionParams attn(d, rng);
      store["wq"] = attn.wq;
      store["wk"] = attn.wk;
      store["wv"] = attn.wv;
      Tensor& ef = add("entity_fine", Gaussian(L, d, rng));
      Tensor& mf = add("mention_fine", Gaussian(L, d, rng));
      Tensor& ec = add("entity_coarse", Gaussian(1, d, rng));
      Tensor& wq = store["wq"];
      Tensor& wk = store["wk"];
      Tensor& wv = store["wv"];
      c.forward = [&, mask](Binder& b) {
        matching::FineQueries q{ad::MatMul(b(ef), b(wq)), b(ec), mask};
        matching::FineKeys k{ad::MatMul(b(mf), b(wk)), ad::MatMul(b(mf), b(wv)),
                             mask};
        return matching::FineMatch(q, k).score;
      };
      break;
    }
    case GradComponent::kGatedFuse: {
      norm = LayerNorm(d);
      norm.gamma.value = Gaussian(1, d, rng, 0.5).array() + 1.0;
      norm.beta.value = Gaussian(1, d, rng, 0.5);
      Tensor& h = add("coarse", Gaussian(1, d, rng));
      Tensor& f = add("other_fine", Gaussian(L, d, rng));
      c.forward = [&, mask](Binder& b) {
        return matching::GatedFuse(b, b(h), b(f), mask, norm);
      };
      c.tensors.emplace_back("ln.gamma", &norm.gamma);
      c.tensors.emplace_back("ln.beta", &norm.beta);
      break;
    }
    case GradComponent::kContrastiveLoss: {
      Tensor& row = add("scores", Gaussian(1, std::max(d, 2), rng, 2.0));
      c.forward = [&row](Binder& b) {
        return training::ContrastiveLoss(b(row), 0);
      };
      break;
    }
    case GradComponent::kSmoe: {
      if (o.top_k < 1 || o.top_k > o.experts) {
        throw ArgumentError("gradcheck: top_k must be in [1, experts]");
      }
      fuse = Mlp(d, d, d, rng);
      layers.emplace_back(d, o.experts, o.top_k, 2 * d, rng);
      fuse.VisitParams("fuse", [&](const std::string& n, Tensor& t) {
        c.tensors.emplace_back(n, &t);
      });
      layers[0].VisitParams("layer0", [&](const std::string& n, Tensor& t) {
        c.tensors.emplace_back(n, &t);
      });
      Tensor& coarse = add("coarse", Gaussian(1, d, rng));
      Tensor& fine = add("fine", Gaussian(L, d, rng));
      c.forward = [&, mask](Binder& b) {
        smoe::Fused f = smoe::Fuse(b, fuse, b(fine), mask, b(coarse));
        if (!have_routing) {
          ad::Var out = smoe::Forward(b, layers, f.tokens, f.mask, nullptr,
                                      &routing);
          have_routing = true;
          return out;
        }
        return smoe::Forward(b, layers, f.tokens, f.mask, &routing);
      };
      break;
    }
  }
  for (auto& [name, t] : store) c.tensors.emplace_back(name, &t);

  // Fix routing (if any) and the probe weights with one plain pass.
  Matrix out_shape;
  {
    ad::Tape tape(false);
    Binder bind(tape);
    out_shape = c.forward(bind).value();
  }
  const Matrix weights = Gaussian(out_shape.rows(), out_shape.cols(), rng);

  // Analytic gradient.
  for (auto& [name, t] : c.tensors) t->ZeroGrad();
  {
    ad::Tape tape(true);
    Binder bind(tape);
    ad::Var out = c.forward(bind);
    ad::Var loss = ad::Sum(ad::Mul(out, tape.Constant(weights)));
    tape.Backward(loss);
  }

  GradCheckResult res;
  res.component = component;
  for (auto& [name, t] : c.tensors) {
    for (Eigen::Index i = 0; i < t->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
        const double orig = t->value(i, j);
        t->value(i, j) = orig + o.eps;
        const double up = Probe(c, weights);
        t->value(i, j) = orig - o.eps;
        const double down = Probe(c, weights);
        t->value(i, j) = orig;
        const double numeric = (up - down) / (2.0 * o.eps);
        const double analytic = t->grad(i, j);
        const double err = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        ++res.checked;
        if (res.worst.empty() || err > res.max_rel_error) {
          res.max_rel_error = err;
          res.worst = name + "[" + std::to_string(i) + "," +
                      std::to_string(j) + "]";
        }
      }
    }
  }
  return res;
}

}  // namespace moelink
