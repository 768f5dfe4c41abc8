#include "snapflow/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "snapflow/data.hpp"
#include "snapflow/graph.hpp"
#include "snapflow/losses.hpp"
#include "snapflow/occlusion.hpp"
#include "snapflow/rng.hpp"
#include "snapflow/warp.hpp"

namespace snapflow {

bool CheckSummary::all_passed() const {
  for (const CheckItem& item : items)
    if (!item.passed) return false;
  return true;
}

std::string CheckSummary::text() const {
  std::ostringstream out;
  for (const CheckItem& item : items) {
    out << (item.passed ? "pass  " : "FAIL  ") << item.name;
    if (!item.detail.empty()) out << "  [" << item.detail << "]";
    out << "\n";
  }
  out << (all_passed() ? "all checks passed" : "CHECKS FAILED") << "\n";
  return out.str();
}

namespace {

Tensor rand_uniform(Rng& rng, const std::vector<int>& shape, float lo, float hi) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Magnitude in [lo, hi], sign random; keeps kinked ops away from 0.
Tensor rand_signed(Rng& rng, const std::vector<int>& shape, float lo, float hi) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    const float m = static_cast<float>(rng.uniform(lo, hi));
    t[i] = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// Shuffled multiples of 0.1, so any two elements differ by at least 0.1 and
// max-pool selections cannot flip under the finite-difference step.
Tensor spaced_values(Rng& rng, const std::vector<int>& shape) {
  Tensor t(shape);
  std::vector<int> order(static_cast<size_t>(t.numel()));
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1],
              order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = 0.1f * static_cast<float>(order[static_cast<size_t>(i)]) -
           0.05f * static_cast<float>(t.numel());
  return t;
}

// Flow whose sample points sit inside the image and inside bilinear cells
// with margin 0.3, so no clamp or cell boundary lies within reach of the
// finite-difference step.
Tensor interior_flow(Rng& rng, int h, int w) {
  Tensor flow({1, 2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double tx = rng.uniform_int(0, w - 2) + rng.uniform(0.3, 0.7);
      const double ty = rng.uniform_int(0, h - 2) + rng.uniform(0.3, 0.7);
      flow[static_cast<int64_t>(y) * w + x] = static_cast<float>(tx - x);
      flow[static_cast<int64_t>(h) * w + y * w + x] = static_cast<float>(ty - y);
    }
  return flow;
}

Tensor binary_mask(Rng& rng, const std::vector<int>& shape, double p_one) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = rng.uniform() < p_one ? 1.0f : 0.0f;
  return t;
}

struct GradCase {
  std::string name;
  float tol = 1e-4f;
  // Which ops the loss touches decides the step. Piecewise-linear and
  // quadratic ops have no central-difference truncation error, so a wide
  // step drowns out float32 rounding; genuinely curved ops need a narrower
  // one. Cases whose margins cannot rule out a kink inside the step set
  // kinky, enabling the curvature-based skip.
  float h = 0.05f;
  bool kinky = false;
  ParamStore params;
  std::function<NodeId(Graph&, ParamStore&)> build;
};

double eval_loss(GradCase& c) {
  Graph g;
  NodeId loss = c.build(g, c.params);
  check(g.value(loss).numel() == 1, c.name, ": loss is not a scalar");
  return static_cast<double>(g.value(loss)[0]);
}

struct FdOutcome {
  bool ok = true;
  int skipped = 0;
  double max_rel = 0.0;
  std::string detail;
};

FdOutcome fd_compare(GradCase& c) {
  FdOutcome out;
  std::map<std::string, Tensor> grads;
  {
    Graph g;
    NodeId loss = c.build(g, c.params);
    g.backward(loss);
    grads = g.param_grads();
  }
  const double f0 = eval_loss(c);

  for (auto& [pname, entry] : c.params) {
    if (!entry.trainable) continue;
    auto git = grads.find(pname);
    if (git == grads.end()) {
      out.ok = false;
      out.detail = pname + " received no gradient";
      return out;
    }
    Tensor& p = entry.tensor;
    const Tensor& analytic = git->second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const float keep = p[i];
      const float up = keep + c.h, down = keep - c.h;
      p[i] = up;
      const double fp = eval_loss(c);
      p[i] = down;
      const double fm = eval_loss(c);
      p[i] = keep;
      const double fd =
          (fp - fm) / (static_cast<double>(up) - static_cast<double>(down));
      const double an = static_cast<double>(analytic[i]);
      const double rel =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      if (rel <= static_cast<double>(c.tol)) {
        out.max_rel = std::max(out.max_rel, rel);
        continue;
      }
      // The quotient itself is unusable where the measured curvature is
      // large (a kink crossed the step); skip those points.
      const double curvature = std::abs(fp + fm - 2.0 * f0);
      if (c.kinky && curvature > 5e-6 * std::max(1.0, std::abs(f0))) {
        ++out.skipped;
        continue;
      }
      std::ostringstream msg;
      msg << pname << "[" << i << "]: analytic " << an << " vs fd " << fd
          << " (rel " << rel << ")";
      out.ok = false;
      out.detail = msg.str();
      return out;
    }
  }
  return out;
}

// Wraps "op output times a fixed random field, summed" so gradients are
// non-uniform and transposition mistakes show up.
GradCase probe_case(const std::string& name, Rng& rng, ParamStore&& params,
                    std::function<NodeId(Graph&, ParamStore&)> op,
                    float tol = 1e-4f) {
  GradCase c;
  c.name = name;
  c.tol = tol;
  c.params = std::move(params);
  std::vector<int> out_shape;
  {
    Graph g;
    out_shape = g.value(op(g, c.params)).shape();
  }
  Tensor k = rand_uniform(rng, out_shape, -1.0f, 1.0f);
  c.build = [op, k](Graph& g, ParamStore& ps) {
    return g.sum(g.mul(op(g, ps), g.constant(k)));
  };
  return c;
}

// A case whose op already returns a scalar.
GradCase scalar_case(const std::string& name, ParamStore&& params,
                     std::function<NodeId(Graph&, ParamStore&)> op,
                     float tol = 1e-4f) {
  GradCase c;
  c.name = name;
  c.tol = tol;
  c.params = std::move(params);
  c.build = std::move(op);
  return c;
}

using CaseMaker = std::function<GradCase(Rng&)>;

std::vector<std::pair<std::string, CaseMaker>> grad_cases() {
  std::vector<std::pair<std::string, CaseMaker>> cases;
  auto push = [&](const std::string& name, CaseMaker maker) {
    cases.emplace_back(name, std::move(maker));
  };

  push("add", [](Rng& rng) {
    ParamStore ps;
    ps.add("a", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    ps.add("b", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    return probe_case("add", rng, std::move(ps), [](Graph& g, ParamStore& p) {
      return g.add(g.param(p, "a"), g.param(p, "b"));
    });
  });
  push("sub", [](Rng& rng) {
    ParamStore ps;
    ps.add("a", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    ps.add("b", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    return probe_case("sub", rng, std::move(ps), [](Graph& g, ParamStore& p) {
      return g.sub(g.param(p, "a"), g.param(p, "b"));
    });
  });
  push("mul", [](Rng& rng) {
    ParamStore ps;
    ps.add("a", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    ps.add("b", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    return probe_case("mul", rng, std::move(ps), [](Graph& g, ParamStore& p) {
      return g.mul(g.param(p, "a"), g.param(p, "b"));
    });
  });
  push("scale", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {3, 4}, -1.0f, 1.0f));
    const float c = static_cast<float>(rng.uniform(0.5, 2.0));
    return probe_case("scale", rng, std::move(ps),
                      [c](Graph& g, ParamStore& p) {
                        return g.scale(g.param(p, "x"), c);
                      });
  });
  push("add_scalar", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {3, 4}, -1.0f, 1.0f));
    const float c = static_cast<float>(rng.uniform(-1.0, 1.0));
    return probe_case("add_scalar", rng, std::move(ps),
                      [c](Graph& g, ParamStore& p) {
                        return g.add_scalar(g.param(p, "x"), c);
                      });
  });
  push("abs", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_signed(rng, {2, 3, 4}, 0.2f, 1.0f));
    return probe_case("abs", rng, std::move(ps), [](Graph& g, ParamStore& p) {
      return g.abs(g.param(p, "x"));
    });
  });
  push("square", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    return probe_case("square", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.square(g.param(p, "x"));
                      });
  });
  push("exp", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    GradCase c = probe_case("exp", rng, std::move(ps),
                            [](Graph& g, ParamStore& p) {
                              return g.exp(g.param(p, "x"));
                            });
    c.h = 0.005f;
    return c;
  });
  push("leaky_relu", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_signed(rng, {2, 3, 4}, 0.2f, 1.0f));
    return probe_case("leaky_relu", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.leaky_relu(g.param(p, "x"), 0.2f);
                      });
  });
  push("reshape", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    return probe_case("reshape", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.reshape(g.param(p, "x"), {4, 6});
                      });
  });
  push("narrow", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {2, 5, 3}, -1.0f, 1.0f));
    return probe_case("narrow", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.narrow(g.param(p, "x"), 1, 1, 3);
                      });
  });
  push("concat", [](Rng& rng) {
    ParamStore ps;
    ps.add("a", rand_uniform(rng, {2, 2, 3}, -1.0f, 1.0f));
    ps.add("b", rand_uniform(rng, {2, 4, 3}, -1.0f, 1.0f));
    return probe_case("concat", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.concat(g.param(p, "a"), g.param(p, "b"), 1);
                      });
  });
  push("broadcast_time", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {1, 2, 3, 3}, -1.0f, 1.0f));
    return probe_case("broadcast_time", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.broadcast_time(g.param(p, "x"), 3);
                      });
  });
  push("sum", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {3, 4}, -1.0f, 1.0f));
    return scalar_case("sum", std::move(ps), [](Graph& g, ParamStore& p) {
      return g.sum(g.param(p, "x"));
    });
  });
  push("mean", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {2, 3, 4}, -1.0f, 1.0f));
    return scalar_case("mean", std::move(ps), [](Graph& g, ParamStore& p) {
      return g.mean(g.param(p, "x"));
    });
  });
  push("convolve2d_s1", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {2, 3, 6, 6}, -0.3f, 0.3f));
    ps.add("w", rand_uniform(rng, {4, 3, 3, 3}, -0.25f, 0.25f));
    ps.add("b", rand_uniform(rng, {4}, -0.2f, 0.2f));
    return probe_case("convolve2d_s1", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.convolve(g.param(p, "x"), g.param(p, "w"),
                                          g.param(p, "b"), {1, 1}, {1, 1});
                      });
  });
  push("convolve2d_s2", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {1, 3, 8, 8}, -0.3f, 0.3f));
    ps.add("w", rand_uniform(rng, {2, 3, 4, 4}, -0.25f, 0.25f));
    return probe_case("convolve2d_s2", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.convolve(g.param(p, "x"), g.param(p, "w"), -1,
                                          {2, 2}, {1, 1});
                      });
  });
  push("convolve3d_s1", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {1, 2, 3, 5, 5}, -0.3f, 0.3f));
    ps.add("w", rand_uniform(rng, {3, 2, 3, 3, 3}, -0.25f, 0.25f));
    ps.add("b", rand_uniform(rng, {3}, -0.2f, 0.2f));
    return probe_case("convolve3d_s1", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.convolve(g.param(p, "x"), g.param(p, "w"),
                                          g.param(p, "b"), {1, 1, 1},
                                          {1, 1, 1});
                      });
  });
  push("convolve3d_full", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {1, 2, 3, 4, 4}, -0.3f, 0.3f));
    ps.add("w", rand_uniform(rng, {3, 2, 3, 4, 4}, -0.25f, 0.25f));
    ps.add("b", rand_uniform(rng, {3}, -0.2f, 0.2f));
    return probe_case("convolve3d_full", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.convolve(g.param(p, "x"), g.param(p, "w"),
                                          g.param(p, "b"), {1, 1, 1},
                                          {0, 0, 0});
                      });
  });
  push("linear", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {3, 7}, -0.5f, 0.5f));
    ps.add("w", rand_uniform(rng, {4, 7}, -0.4f, 0.4f));
    ps.add("b", rand_uniform(rng, {4}, -0.3f, 0.3f));
    return probe_case("linear", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.linear(g.param(p, "x"), g.param(p, "w"),
                                        g.param(p, "b"));
                      });
  });
  push("max_pool2d", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", spaced_values(rng, {1, 2, 4, 6}));
    return probe_case("max_pool2d", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.max_pool(g.param(p, "x"), {2, 2});
                      });
  });
  push("max_pool3d", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", spaced_values(rng, {1, 2, 3, 4, 4}));
    return probe_case("max_pool3d", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.max_pool(g.param(p, "x"), {1, 2, 2});
                      });
  });
  push("upsample2d", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {1, 2, 3, 3}, -1.0f, 1.0f));
    return probe_case("upsample2d", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.upsample_nearest(g.param(p, "x"), {2, 2});
                      });
  });
  push("upsample3d", [](Rng& rng) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {1, 2, 2, 3, 3}, -1.0f, 1.0f));
    return probe_case("upsample3d", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.upsample_nearest(g.param(p, "x"), {2, 2, 2});
                      });
  });
  auto bn_case = [](Rng& rng, BatchNormMode mode, const std::string& name) {
    ParamStore ps;
    ps.add("x", rand_uniform(rng, {3, 2, 4, 4}, -1.0f, 1.0f));
    ps.add("gamma", rand_uniform(rng, {2}, 0.5f, 1.5f));
    ps.add("beta", rand_uniform(rng, {2}, -0.5f, 0.5f));
    ps.add("rm", rand_uniform(rng, {2}, -0.3f, 0.3f), false);
    ps.add("rv", rand_uniform(rng, {2}, 0.5f, 1.5f), false);
    return probe_case(name, rng, std::move(ps),
                      [mode](Graph& g, ParamStore& p) {
                        BatchNormState state{&p.get("rm"), &p.get("rv")};
                        return g.batch_norm(g.param(p, "x"),
                                            g.param(p, "gamma"),
                                            g.param(p, "beta"), state, mode);
                      },
                      1e-3f);
  };
  push("batch_norm_train", [bn_case](Rng& rng) {
    return bn_case(rng, BatchNormMode::kTrain, "batch_norm_train");
  });
  push("batch_norm_eval", [bn_case](Rng& rng) {
    return bn_case(rng, BatchNormMode::kEval, "batch_norm_eval");
  });
  push("warp_bilinear", [](Rng& rng) {
    ParamStore ps;
    const int h = 5, w = 6;
    ps.add("src", rand_uniform(rng, {1, 2, h, w}, 0.0f, 1.0f));
    ps.add("flow", interior_flow(rng, h, w));
    return probe_case("warp_bilinear", rng, std::move(ps),
                      [](Graph& g, ParamStore& p) {
                        return g.warp_bilinear(g.param(p, "src"),
                                               g.param(p, "flow"));
                      });
  });

  push("loss_kl", [](Rng& rng) {
    ParamStore ps;
    ps.add("mu", rand_uniform(rng, {2, 4}, -1.0f, 1.0f));
    ps.add("log_var", rand_uniform(rng, {2, 4}, -1.0f, 1.0f));
    GradCase c = scalar_case("loss_kl", std::move(ps),
                             [](Graph& g, ParamStore& p) {
                               return kl_divergence_std_normal(
                                   g, g.param(p, "mu"), g.param(p, "log_var"));
                             });
    c.h = 0.005f;
    return c;
  });
  push("loss_tv", [](Rng& rng) {
    // Additive row/column ramps with 0.1-margin increments keep every
    // forward difference away from the l1 kink.
    const int ch = 2, h = 4, w = 5;
    Tensor x({1, ch, h, w});
    for (int c = 0; c < ch; ++c) {
      std::vector<float> u(static_cast<size_t>(h)), v(static_cast<size_t>(w));
      for (int r = 1; r < h; ++r)
        u[static_cast<size_t>(r)] =
            u[static_cast<size_t>(r - 1)] +
            static_cast<float>(rng.uniform(0.1, 0.5)) *
                (rng.uniform() < 0.5 ? -1.0f : 1.0f);
      for (int cc = 1; cc < w; ++cc)
        v[static_cast<size_t>(cc)] =
            v[static_cast<size_t>(cc - 1)] +
            static_cast<float>(rng.uniform(0.1, 0.5)) *
                (rng.uniform() < 0.5 ? -1.0f : 1.0f);
      for (int r = 0; r < h; ++r)
        for (int cc = 0; cc < w; ++cc)
          x[(static_cast<int64_t>(c) * h + r) * w + cc] =
              u[static_cast<size_t>(r)] + v[static_cast<size_t>(cc)] +
              static_cast<float>(rng.uniform(-0.01, 0.01));
    }
    ParamStore ps;
    ps.add("x", std::move(x));
    return scalar_case("loss_tv", std::move(ps), [](Graph& g, ParamStore& p) {
      return tv_l1(g, g.param(p, "x"));
    });
  });
  push("loss_cycle", [](Rng& rng) {
    // Positive flow components keep the cycle residual at least 0.4 away
    // from the l1 kink, far beyond the step size. The loss is a raw sum, so
    // the grid stays small to keep its float32 rounding under the budget,
    // and the step widens to match.
    const int h = 4, w = 4, t = 2;
    ParamStore ps;
    std::vector<Tensor> masks_ref, masks_tgt;
    for (int i = 0; i < t; ++i) {
      ps.add("fwd" + std::to_string(i),
             rand_uniform(rng, {1, 2, h, w}, 0.2f, 0.8f));
      ps.add("bwd" + std::to_string(i),
             rand_uniform(rng, {1, 2, h, w}, 0.2f, 0.8f));
      masks_ref.push_back(binary_mask(rng, {1, 1, h, w}, 0.7));
      masks_tgt.push_back(binary_mask(rng, {1, 1, h, w}, 0.7));
    }
    GradCase c = scalar_case(
        "loss_cycle", std::move(ps),
        [t, masks_ref, masks_tgt](Graph& g, ParamStore& p) {
          std::vector<NodeId> fwd, bwd;
          for (int i = 0; i < t; ++i) {
            fwd.push_back(g.param(p, "fwd" + std::to_string(i)));
            bwd.push_back(g.param(p, "bwd" + std::to_string(i)));
          }
          return loss_cycle_consistency(g, fwd, bwd, masks_ref, masks_tgt);
        });
    c.h = 0.1f;
    return c;
  });
  push("loss_photometric", [](Rng& rng) {
    // Reference bright, targets dark: photometric residuals stay >= 0.2 in
    // magnitude, and interior flows avoid clamp and cell boundaries. Small
    // grid and wide step for the same raw-sum rounding reason as the cycle
    // loss.
    const int h = 4, w = 4, t = 2;
    ParamStore ps;
    ps.add("i0", rand_uniform(rng, {1, 3, h, w}, 0.6f, 0.95f));
    std::vector<Tensor> masks_ref, masks_tgt;
    for (int i = 0; i < t; ++i) {
      ps.add("frame" + std::to_string(i),
             rand_uniform(rng, {1, 3, h, w}, 0.05f, 0.4f));
      ps.add("fwd" + std::to_string(i), interior_flow(rng, h, w));
      ps.add("bwd" + std::to_string(i), interior_flow(rng, h, w));
      masks_ref.push_back(binary_mask(rng, {1, 1, h, w}, 0.7));
      masks_tgt.push_back(binary_mask(rng, {1, 1, h, w}, 0.7));
    }
    GradCase c = scalar_case(
        "loss_photometric", std::move(ps),
        [t, masks_ref, masks_tgt](Graph& g, ParamStore& p) {
          NodeId i0 = g.param(p, "i0");
          std::vector<NodeId> frames, fwd, bwd;
          for (int i = 0; i < t; ++i) {
            frames.push_back(g.param(p, "frame" + std::to_string(i)));
            fwd.push_back(g.param(p, "fwd" + std::to_string(i)));
            bwd.push_back(g.param(p, "bwd" + std::to_string(i)));
          }
          return loss_bidirectional_photometric(g, i0, frames, fwd, bwd,
                                                masks_ref, masks_tgt);
        });
    c.h = 0.1f;
    c.kinky = true; // leaky_relu units inside the feature pyramid
    return c;
  });
  push("loss_perceptual", [](Rng& rng) {
    ParamStore ps;
    ps.add("pred", rand_uniform(rng, {1, 3, 8, 8}, 0.0f, 1.0f));
    Tensor target = rand_uniform(rng, {1, 3, 8, 8}, 0.0f, 1.0f);
    auto pyramid = std::make_shared<FeaturePyramid>();
    GradCase c = scalar_case("loss_perceptual", std::move(ps),
                             [target, pyramid](Graph& g, ParamStore& p) {
                               return loss_perceptual(g, g.param(p, "pred"),
                                                      g.constant(target),
                                                      *pyramid, 0.05f);
                             });
    c.kinky = true; // leaky_relu units inside the feature pyramid
    return c;
  });
  return cases;
}

CheckItem sum_gradient_ones() {
  CheckItem item{"sum: gradient is exactly all ones", false, ""};
  Rng rng(5);
  ParamStore ps;
  ps.add("x", rand_uniform(rng, {3, 4}, -1.0f, 1.0f));
  Graph g;
  NodeId loss = g.sum(g.param(ps, "x"));
  g.backward(loss);
  const Tensor grad = g.param_grads().at("x");
  item.passed = true;
  for (int64_t i = 0; i < grad.numel(); ++i)
    if (grad[i] != 1.0f) {
      item.passed = false;
      item.detail = "grad[" + std::to_string(i) + "] = " + std::to_string(grad[i]);
      break;
    }
  return item;
}

CheckItem square_gradient_closed_form() {
  CheckItem item{"sum of squares at [1,2]: gradient exactly [2,4]", false, ""};
  ParamStore ps;
  ps.add("x", Tensor({2}, {1.0f, 2.0f}));
  Graph g;
  NodeId loss = g.sum(g.square(g.param(ps, "x")));
  g.backward(loss);
  const Tensor grad = g.param_grads().at("x");
  item.passed = grad[0] == 2.0f && grad[1] == 4.0f;
  if (!item.passed)
    item.detail = "got [" + std::to_string(grad[0]) + ", " +
                  std::to_string(grad[1]) + "]";
  return item;
}

}  // namespace

CheckSummary check_gradients(uint64_t seed, int instances_per_case) {
  CheckSummary summary;
  summary.items.push_back(sum_gradient_ones());
  summary.items.push_back(square_gradient_closed_form());
  summary.instances += 2;

  Rng base(seed);
  uint64_t salt = 1;
  for (auto& [name, maker] : grad_cases()) {
    CheckItem item{name, true, ""};
    double max_rel = 0.0;
    int skipped = 0;
    for (int k = 0; k < instances_per_case; ++k) {
      Rng rng = base.split(salt++);
      GradCase c = maker(rng);
      FdOutcome outcome = fd_compare(c);
      ++summary.instances;
      max_rel = std::max(max_rel, outcome.max_rel);
      skipped += outcome.skipped;
      if (!outcome.ok) {
        item.passed = false;
        item.detail = "instance " + std::to_string(k) + ": " + outcome.detail;
        break;
      }
    }
    if (item.passed) {
      std::ostringstream d;
      d << instances_per_case << " instances, max rel " << max_rel;
      if (skipped > 0) d << ", " << skipped << " kink points skipped";
      item.detail = d.str();
    }
    summary.items.push_back(item);
  }
  return summary;
}

CheckSummary check_warp_oracle(uint64_t seed, int images) {
  CheckSummary summary;
  CheckItem integer{"integer flows match index-lookup oracle", true, ""};
  CheckItem identity{"zero flow reproduces the source bit-exactly", true, ""};
  Rng base(seed);

  for (int i = 0; i < images; ++i) {
    Rng rng = base.split(static_cast<uint64_t>(i));
    const int h = rng.uniform_int(4, 12);
    const int w = rng.uniform_int(4, 12);
    const int c = rng.uniform_int(1, 3);
    const Tensor src = rand_uniform(rng, {c, h, w}, 0.0f, 1.0f);

    const Tensor same = bilinear_sample(src, Tensor({2, h, w}));
    if (identity.passed &&
        std::memcmp(same.data(), src.data(),
                    static_cast<size_t>(src.numel()) * sizeof(float)) != 0) {
      identity.passed = false;
      identity.detail = "image " + std::to_string(i) + " differs";
    }

    Tensor flow({2, h, w});
    for (int64_t j = 0; j < flow.numel(); ++j)
      flow[j] = static_cast<float>(rng.uniform_int(-3, 3));
    const Tensor warped = bilinear_sample(src, flow);
    for (int ch = 0; ch < c && integer.passed; ++ch)
      for (int y = 0; y < h && integer.passed; ++y)
        for (int x = 0; x < w; ++x) {
          const int64_t hw = static_cast<int64_t>(h) * w;
          const int sx = std::clamp(
              x + static_cast<int>(flow[static_cast<int64_t>(y) * w + x]), 0,
              w - 1);
          const int sy = std::clamp(
              y + static_cast<int>(flow[hw + static_cast<int64_t>(y) * w + x]),
              0, h - 1);
          const float expect = src[(static_cast<int64_t>(ch) * h + sy) * w + sx];
          const float got = warped[(static_cast<int64_t>(ch) * h + y) * w + x];
          if (expect != got) {
            integer.passed = false;
            std::ostringstream d;
            d << "image " << i << " at (c=" << ch << ",y=" << y << ",x=" << x
              << "): got " << got << ", oracle " << expect;
            integer.detail = d.str();
            break;
          }
        }
  }
  if (integer.passed)
    integer.detail = std::to_string(images) + " images bit-exact";
  if (identity.passed)
    identity.detail = std::to_string(images) + " images bit-exact";
  summary.items.push_back(integer);
  summary.items.push_back(identity);
  summary.instances = images;
  return summary;
}

CheckSummary check_occlusion_f1(uint64_t seed, int sequences, float required_f1) {
  CheckSummary summary;
  Rng base(seed);
  SceneParams params;
  int64_t tp = 0, fp = 0, fn = 0;

  for (int i = 0; i < sequences; ++i) {
    Rng rng = base.split(static_cast<uint64_t>(i));
    const SpriteScene scene = sample_scene(params, rng);
    for (int t = 1; t <= scene.frames; ++t) {
      const Tensor fwd = ground_truth_forward_flow(scene, t);
      const Tensor bwd = ground_truth_backward_flow(scene, t);
      const MaskPair predicted = visibility_masks(fwd, bwd);
      const OracleMasks truth = occlusion_oracle(scene, t);
      auto tally = [&](const Tensor& pred, const Tensor& oracle) {
        for (int64_t j = 0; j < pred.numel(); ++j) {
          const bool p = pred[j] < 0.5f;   // predicted occluded
          const bool a = oracle[j] < 0.5f; // actually occluded
          tp += p && a;
          fp += p && !a;
          fn += !p && a;
        }
      };
      tally(predicted.reference, truth.reference);
      tally(predicted.target, truth.target);
    }
  }

  const double f1 =
      tp == 0 ? 0.0
              : 2.0 * static_cast<double>(tp) /
                    static_cast<double>(2 * tp + fp + fn);
  CheckItem item;
  item.name = "occlusion masks from true flows vs scene oracle";
  item.passed = f1 >= static_cast<double>(required_f1);
  std::ostringstream d;
  d << "F1 " << f1 << " (need >= " << required_f1 << "; tp " << tp << ", fp "
    << fp << ", fn " << fn << ")";
  item.detail = d.str();
  summary.items.push_back(item);
  summary.instances = sequences;
  return summary;
}

}  // namespace snapflow
