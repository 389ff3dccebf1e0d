#include "malt/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "malt/errors.hpp"

namespace malt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Gradients are computed as matrices; parameters such as biases may be rank-1.
Tensor reshaped_like(Tensor t, const Tensor& like) {
    if (t.same_shape(like)) return t;
    return Tensor(like.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

}  // namespace

Var Graph::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Graph::param(ParamStore& store, const std::string& name) {
    if (store_ != nullptr && store_ != &store) throw ContractError("graph already bound to another ParamStore");
    store_ = &store;
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return {it->second};
    Node n;
    n.op = "param";
    n.borrowed = &store.at(name).value;
    n.param = name;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    param_ids_.emplace(name, nodes_.size() - 1);
    return {nodes_.size() - 1};
}

Var Graph::make(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.parents.reserve(parents.size());
    for (Var p : parents) {
        if (p.id >= nodes_.size()) throw ContractError("graph: parent handle out of range");
        n.parents.push_back(p.id);
        n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Tensor& Graph::grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad.same_shape(value(id))) n.grad = Tensor(value(id).shape());
    return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    const Tensor& v = value(id);
    if (g.size() != v.size()) {
        throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match node '" + n.op + "' value " +
                             shape_str(v.shape()));
    }
    if (!n.grad.same_shape(v)) {
        n.grad = reshaped_like(g, v);
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Graph::backward(Var loss) {
    if (loss.id >= nodes_.size()) throw ContractError("backward: loss handle out of range");
    if (value(loss.id).size() != 1) {
        throw ContractError("backward: loss must be scalar-shaped, got " + shape_str(value(loss.id).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad = Tensor(value(loss.id).shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || !n.grad.same_shape(value(i)) || !n.backward) continue;
        n.backward(*this, i);
    }
    if (store_ == nullptr) return;
    for (const auto& [name, id] : param_ids_) {
        const Tensor& gn = nodes_[id].grad;
        if (!gn.same_shape(value(id))) continue;
        Tensor& gs = store_->at(name).grad;
        for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += gn[i];
    }
}

Var matmul(Graph& g, Var a, Var b) {
    Tensor out = malt::matmul(g.value(a), g.value(b));
    return g.make("matmul", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (g.needs_grad(a)) g.accumulate(a.id, malt::matmul_nt(dy, g.value(b)));
        if (g.needs_grad(b)) g.accumulate(b.id, malt::matmul_tn(g.value(a), dy));
    });
}

Var matmul_nt(Graph& g, Var a, Var b) {
    Tensor out = malt::matmul_nt(g.value(a), g.value(b));
    return g.make("matmul_nt", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (g.needs_grad(a)) g.accumulate(a.id, malt::matmul(dy, g.value(b)));
        if (g.needs_grad(b)) g.accumulate(b.id, malt::matmul_tn(dy, g.value(a)));
    });
}

Var add(Graph& g, Var a, Var b) {
    require_same_shape("add", g.value(a), g.value(b));
    Tensor out = g.value(a);
    const Tensor& bv = g.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return g.make("add", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
        g.accumulate(a.id, g.grad(self));
        g.accumulate(b.id, g.grad(self));
    });
}

Var add_row(Graph& g, Var x, Var bias) {
    const Tensor& xv = g.value(x);
    const Tensor& bv = g.value(bias);
    if (bv.size() != xv.cols()) {
        throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
    }
    return g.make("add_row", std::move(out), {x, bias}, [x, bias](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        g.accumulate(x.id, dy);
        if (g.needs_grad(bias)) {
            Tensor db({1, dy.cols()});
            for (std::size_t r = 0; r < dy.rows(); ++r) {
                auto row = dy.row(r);
                for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
            }
            g.accumulate(bias.id, db);
        }
    });
}

Var mul(Graph& g, Var a, Var b) {
    require_same_shape("mul", g.value(a), g.value(b));
    Tensor out = g.value(a);
    const Tensor& bv = g.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return g.make("mul", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (g.needs_grad(a)) {
            Tensor da = dy;
            for (std::size_t i = 0; i < da.size(); ++i) da[i] *= g.value(b)[i];
            g.accumulate(a.id, da);
        }
        if (g.needs_grad(b)) {
            Tensor db = dy;
            for (std::size_t i = 0; i < db.size(); ++i) db[i] *= g.value(a)[i];
            g.accumulate(b.id, db);
        }
    });
}

Var scale(Graph& g, Var a, double s) {
    Tensor out = g.value(a);
    for (double& v : out.values()) v *= s;
    return g.make("scale", std::move(out), {a}, [a, s](Graph& g, std::size_t self) {
        Tensor da = g.grad(self);
        for (double& v : da.values()) v *= s;
        g.accumulate(a.id, da);
    });
}

Var gelu(Graph& g, Var x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
    constexpr double a3 = 0.044715;
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a3 * v * v * v)));
    }
    return g.make("gelu", std::move(out), {x}, [x](Graph& g, std::size_t self) {
        const Tensor& xv = g.value(x);
        Tensor dx = g.grad(self);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double v = xv[i];
            const double t = std::tanh(c * (v + a3 * v * v * v));
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a3 * v * v);
            dx[i] *= d;
        }
        g.accumulate(x.id, dx);
    });
}

Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps) {
    const Tensor& xv = g.value(x);
    Tensor out = malt::layer_norm(xv, g.value(gain), g.value(bias), eps);
    // Normalized activations and inverse std per row, reused by backward.
    const std::size_t rows = xv.rows(), d = xv.cols();
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        auto in = xv.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= double(d);
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= double(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        auto h = xhat.row(r);
        for (std::size_t j = 0; j < d; ++j) h[j] = (in[j] - mean) * inv_std[r];
    }
    return g.make("layer_norm", std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                      const Tensor& dy = g.grad(self);
                      const Tensor& gv = g.value(gain);
                      const std::size_t rows = dy.rows(), d = dy.cols();
                      if (g.needs_grad(gain) || g.needs_grad(bias)) {
                          Tensor dg({1, d}), db({1, d});
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < d; ++j) {
                                  dg[j] += dy.at(r, j) * xhat.at(r, j);
                                  db[j] += dy.at(r, j);
                              }
                          }
                          g.accumulate(gain.id, dg);
                          g.accumulate(bias.id, db);
                      }
                      if (g.needs_grad(x)) {
                          Tensor dx(dy.shape());
                          std::vector<double> dh(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                              double sum_dh = 0.0, sum_dh_h = 0.0;
                              for (std::size_t j = 0; j < d; ++j) {
                                  dh[j] = dy.at(r, j) * gv[j];
                                  sum_dh += dh[j];
                                  sum_dh_h += dh[j] * xhat.at(r, j);
                              }
                              for (std::size_t j = 0; j < d; ++j) {
                                  dx.at(r, j) = inv_std[r] / double(d) *
                                                (double(d) * dh[j] - sum_dh - xhat.at(r, j) * sum_dh_h);
                              }
                          }
                          g.accumulate(x.id, dx);
                      }
                  });
}

Var slice_cols(Graph& g, Var x, std::size_t start, std::size_t count) {
    const Tensor& xv = g.value(x);
    if (start + count > xv.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") out of range for " + shape_str(xv.shape()));
    }
    Tensor out({xv.rows(), count});
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t c = 0; c < count; ++c) out.at(r, c) = xv.at(r, start + c);
    }
    return g.make("slice_cols", std::move(out), {x}, [x, start, count](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        Tensor& dx = g.grad_slot(x.id);
        for (std::size_t r = 0; r < dy.rows(); ++r) {
            for (std::size_t c = 0; c < count; ++c) dx.at(r, start + c) += dy.at(r, c);
        }
    });
}

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t rows = g.value(parts[0]).rows();
    std::size_t total = 0;
    for (Var p : parts) {
        if (g.value(p).rows() != rows) throw DimensionError("concat_cols: row counts differ");
        total += g.value(p).cols();
    }
    Tensor out({rows, total});
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& pv = g.value(p);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < pv.cols(); ++c) out.at(r, offset + c) = pv.at(r, c);
        }
        offset += pv.cols();
    }
    return g.make("concat_cols", std::move(out), parts, [parts](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        std::size_t offset = 0;
        for (Var p : parts) {
            const std::size_t w = g.value(p).cols();
            if (g.needs_grad(p)) {
                Tensor dp({dy.rows(), w});
                for (std::size_t r = 0; r < dy.rows(); ++r) {
                    for (std::size_t c = 0; c < w; ++c) dp.at(r, c) = dy.at(r, offset + c);
                }
                g.accumulate(p.id, dp);
            }
            offset += w;
        }
    });
}

Var gather_rows(Graph& g, Var x, std::vector<std::size_t> rows) {
    const Tensor& xv = g.value(x);
    Tensor out({rows.size(), xv.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.rows()) throw DimensionError("gather_rows: row index out of range");
        auto src = xv.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return g.make("gather_rows", std::move(out), {x}, [x, rows = std::move(rows)](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        Tensor& dx = g.grad_slot(x.id);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto src = dy.row(i);
            auto dst = dx.row(rows[i]);
            for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
        }
    });
}

Var sum_all(Graph& g, Var x) {
    double s = 0.0;
    for (double v : g.value(x).values()) s += v;
    return g.make("sum", Tensor::scalar(s), {x}, [x](Graph& g, std::size_t self) {
        g.accumulate(x.id, Tensor(g.value(x).shape(), g.grad(self)[0]));
    });
}

Var mean_rows(Graph& g, Var x) {
    const Tensor& xv = g.value(x);
    const std::size_t rows = xv.rows();
    if (rows == 0) throw DimensionError("mean_rows: empty input");
    Tensor out({1, xv.cols()});
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = xv.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
    }
    for (double& v : out.values()) v /= double(rows);
    return g.make("mean_rows", std::move(out), {x}, [x](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        const Tensor& xv = g.value(x);
        Tensor dx(xv.shape());
        const double inv = 1.0 / double(xv.rows());
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            for (std::size_t c = 0; c < xv.cols(); ++c) dx.at(r, c) = dy[c] * inv;
        }
        g.accumulate(x.id, dx);
    });
}

namespace {

// Shared backward for hard masks: pass the gradient only where the forward
// kept the score.
Var masked_passthrough(Graph& g, const char* op, Var scores, Tensor out) {
    return g.make(op, std::move(out), {scores}, [scores](Graph& g, std::size_t self) {
        Tensor dx = g.grad(self);
        const Tensor& y = g.value(self);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (y[i] == kNegInf) dx[i] = 0.0;
        }
        g.accumulate(scores.id, dx);
    });
}

}  // namespace

Var mask_keys(Graph& g, Var scores, const std::vector<bool>& key_valid) {
    const Tensor& sv = g.value(scores);
    if (key_valid.size() != sv.cols()) throw DimensionError("mask_keys: validity length does not match key count");
    Tensor out = sv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            if (!key_valid[c]) out.at(r, c) = kNegInf;
        }
    }
    return masked_passthrough(g, "mask_keys", scores, std::move(out));
}

Var topk_mask(Graph& g, Var scores, std::size_t k) {
    return masked_passthrough(g, "topk_mask", scores, malt::topk_mask(g.value(scores), k));
}

Var softmax_rows(Graph& g, Var x) {
    Tensor out = malt::softmax_rows(g.value(x));
    return g.make("softmax", std::move(out), {x}, [x](Graph& g, std::size_t self) {
        const Tensor& y = g.value(self);
        const Tensor& dy = g.grad(self);
        Tensor dx(y.shape());
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) dot += dy.at(r, c) * y.at(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) dx.at(r, c) = y.at(r, c) * (dy.at(r, c) - dot);
        }
        g.accumulate(x.id, dx);
    });
}

Var cross_entropy(Graph& g, Var logits, const std::vector<int>& labels) {
    const Tensor& z = g.value(logits);
    if (labels.size() != z.rows()) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(z.rows()) + " logit rows");
    }
    for (int y : labels) {
        if (y < 0 || std::size_t(y) >= z.cols()) {
            throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(z.cols() - 1) +
                            "]");
        }
    }
    Tensor probs = malt::softmax_rows(z);
    double loss = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        loss += mx + std::log(s) - row[std::size_t(labels[r])];
    }
    loss /= double(z.rows());
    return g.make("cross_entropy", Tensor::scalar(loss), {logits},
                  [logits, labels, probs = std::move(probs)](Graph& g, std::size_t self) {
                      Tensor dz = probs;
                      const double scale = g.grad(self)[0] / double(dz.rows());
                      for (std::size_t r = 0; r < dz.rows(); ++r) dz.at(r, std::size_t(labels[r])) -= 1.0;
                      for (double& v : dz.values()) v *= scale;
                      g.accumulate(logits.id, dz);
                  });
}

Var weighted_sum(Graph& g, const std::vector<Var>& scalars, const std::vector<double>& weights) {
    if (scalars.size() != weights.size()) throw ContractError("weighted_sum: arity mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (g.value(scalars[i]).size() != 1) throw DimensionError("weighted_sum: non-scalar input");
        total += weights[i] * g.value(scalars[i])[0];
    }
    return g.make("weighted_sum", Tensor::scalar(total), scalars, [scalars, weights](Graph& g, std::size_t self) {
        const double dy = g.grad(self)[0];
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            g.accumulate(scalars[i].id, Tensor::scalar(weights[i] * dy));
        }
    });
}

}  // namespace malt
