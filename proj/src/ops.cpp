// SPDX-License-Identifier: Apache-2.0
#include "deepmim/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace deepmim {

namespace {

template <typename Scalar>
void same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
}

template <typename Scalar>
void require_rank(const Tensor<Scalar>& t, Index rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

template <typename Scalar>
constexpr Scalar kGeluScale = Scalar(0.7978845608028654);  // sqrt(2 / pi)
template <typename Scalar>
constexpr Scalar kGeluCubic = Scalar(0.044715);

}  // namespace

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank(B, 2, "matmul rhs");
  if (A.rank() < 1 || A.last_dim() != B.dim(0))
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  Shape shape = A.shape();
  shape.back() = B.dim(1);
  Tensor<Scalar> out(shape);
  out.matrix().noalias() = A.matrix() * B.matrix();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->matrix().noalias() += g.matrix() * b.value().matrix().transpose();
    if (auto* gb = t.grad_buffer(b)) gb->matrix().noalias() += a.value().matrix().transpose() * g.matrix();
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  same_tape(x, weight);
  same_tape(x, bias);
  const auto& X = x.value();
  const auto& W = weight.value();
  const auto& b = bias.value();
  require_rank(W, 2, "linear weight");
  if (X.last_dim() != W.dim(0) || b.size() != W.dim(1))
    throw DimensionError("linear shapes disagree: x " + shape_str(X.shape()) + ", W " +
                         shape_str(W.shape()) + ", b " + shape_str(b.shape()));
  Shape shape = X.shape();
  shape.back() = W.dim(1);
  Tensor<Scalar> out(shape);
  auto Y = out.matrix();
  Y.noalias() = X.matrix() * W.matrix();
  Y.rowwise() += b.data().matrix().transpose();
  return x.tape().record(std::move(out), {x, weight, bias},
                         [x, weight, bias](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           const auto G = g.matrix();
                           if (auto* gx = t.grad_buffer(x))
                             gx->matrix().noalias() += G * weight.value().matrix().transpose();
                           if (auto* gw = t.grad_buffer(weight))
                             gw->matrix().noalias() += x.value().matrix().transpose() * G;
                           if (auto* gb = t.grad_buffer(bias))
                             gb->data() += G.colwise().sum().transpose().array();
                         });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  same_tape(a, b);
  if (a.shape() != b.shape())
    throw DimensionError("add shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(a, g.data());
    t.accumulate(b, g.data());
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  same_tape(a, b);
  if (a.shape() != b.shape())
    throw DimensionError("mul shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<Scalar> out(a.shape(), a.value().data() * b.value().data());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(a, g.data() * b.value().data());
    t.accumulate(b, g.data() * a.value().data());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.shape(), x.value().data() * factor);
  return x.tape().record(std::move(out), {x}, [x, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(x, g.data() * factor);
  });
}

template <typename Scalar>
Var<Scalar> add_broadcast(const Var<Scalar>& x, const Var<Scalar>& y) {
  same_tape(x, y);
  const auto& X = x.value();
  const auto& Y = y.value();
  require_rank(X, 3, "add_broadcast");
  if (Y.shape() != Shape{X.dim(1), X.dim(2)})
    throw DimensionError("add_broadcast: " + shape_str(Y.shape()) + " does not broadcast onto " +
                         shape_str(X.shape()));
  const Index batch = X.dim(0);
  const Index stride = Y.size();
  Tensor<Scalar> out = X;
  for (Index b = 0; b < batch; ++b) out.data().segment(b * stride, stride) += Y.data();
  return x.tape().record(std::move(out), {x, y}, [x, y, batch, stride](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(x, g.data());
    if (auto* gy = t.grad_buffer(y))
      for (Index b = 0; b < batch; ++b) gy->data() += g.data().segment(b * stride, stride);
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  Tensor<Scalar> out = x.value();
  auto Y = out.matrix();
  for (Index r = 0; r < Y.rows(); ++r) {
    auto row = Y.row(r).array();
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
  }
  const std::size_t out_id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, out_id](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto P = t.value(Var<Scalar>(&t, out_id)).matrix();
    const auto G = g.matrix();
    auto* gx = t.grad_buffer(x);
    if (!gx) return;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (G.array() * P.array()).rowwise().sum();
    gx->matrix().array() += P.array() * (G.array().colwise() - dots.array());
  });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  same_tape(x, gamma);
  same_tape(x, beta);
  if (!(eps > Scalar(0))) throw Error("layer_norm eps must be positive");
  const auto& X = x.value();
  const Index d = X.last_dim();
  if (gamma.value().size() != d || beta.value().size() != d)
    throw DimensionError("layer_norm affine parameters must have " + std::to_string(d) + " entries");
  const Index rows = X.leading_rows();
  Tensor<Scalar> xhat(X.shape());
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std(rows);
  {
    auto Xm = X.matrix();
    auto H = xhat.matrix();
    for (Index r = 0; r < rows; ++r) {
      const Scalar mean = Xm.row(r).mean();
      const auto centered = (Xm.row(r).array() - mean).eval();
      const Scalar var = centered.square().mean();
      inv_std[r] = Scalar(1) / std::sqrt(var + eps);
      H.row(r) = (centered * inv_std[r]).matrix();
    }
  }
  Tensor<Scalar> out(X.shape());
  out.matrix() = (xhat.matrix().array().rowwise() * gamma.value().data().transpose()).rowwise() +
                 beta.value().data().transpose();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Scalar>& t,
                                                                             const Tensor<Scalar>& g) {
        const auto G = g.matrix().array();
        const auto H = xhat.matrix().array();
        if (auto* gg = t.grad_buffer(gamma)) gg->data() += (G * H).colwise().sum().transpose();
        if (auto* gb = t.grad_buffer(beta)) gb->data() += G.colwise().sum().transpose();
        if (auto* gx = t.grad_buffer(x)) {
          const auto dh = (G.rowwise() * gamma.value().data().transpose()).eval();
          const auto mean_dh = dh.rowwise().mean().eval();
          const auto mean_dh_h = (dh * H).rowwise().mean().eval();
          gx->matrix().array() +=
              ((dh.colwise() - mean_dh) - H.colwise() * mean_dh_h).colwise() * inv_std;
        }
      });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  constexpr Scalar kC = kGeluScale<Scalar>;
  constexpr Scalar kA = kGeluCubic<Scalar>;
  const auto& X = x.value().data();
  const auto inner = (kC * (X + kA * X.cube())).eval();
  const auto th = inner.tanh().eval();
  Tensor<Scalar> out(x.shape(), Scalar(0.5) * X * (Scalar(1) + th));
  return x.tape().record(std::move(out), {x}, [x, th](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& X = x.value().data();
    const auto d = Scalar(0.5) * (Scalar(1) + th) +
                   Scalar(0.5) * X * (Scalar(1) - th.square()) * kGeluScale<Scalar> *
                       (Scalar(1) + Scalar(3) * kGeluCubic<Scalar> * X.square());
    t.accumulate(x, g.data() * d);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out(Shape{});
  out[0] = x.value().data().sum();
  return x.tape().record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->data() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean_tokens(const Var<Scalar>& x) {
  const auto& X = x.value();
  require_rank(X, 3, "mean_tokens");
  const Index batch = X.dim(0), tokens = X.dim(1), d = X.dim(2);
  Tensor<Scalar> out({batch, d});
  for (Index b = 0; b < batch; ++b)
    out.matrix().row(b) = X.matrix().middleRows(b * tokens, tokens).colwise().mean();
  return x.tape().record(std::move(out), {x}, [x, batch, tokens](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* gx = t.grad_buffer(x);
    if (!gx) return;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(tokens);
    for (Index b = 0; b < batch; ++b)
      gx->matrix().middleRows(b * tokens, tokens).rowwise() += g.matrix().row(b) * inv;
  });
}

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::span<const std::vector<Index>> rows) {
  const auto& X = x.value();
  require_rank(X, 3, "gather_rows");
  const Index batch = X.dim(0), n = X.dim(1), d = X.dim(2);
  if (static_cast<Index>(rows.size()) != batch)
    throw DimensionError("gather_rows: " + std::to_string(rows.size()) + " index lists for batch " +
                         std::to_string(batch));
  const Index k = rows.empty() ? 0 : static_cast<Index>(rows[0].size());
  if (k == 0) throw DimensionError("gather_rows: empty selection");
  for (const auto& r : rows) {
    if (static_cast<Index>(r.size()) != k) throw DimensionError("gather_rows: ragged selection");
    for (Index i : r)
      if (i < 0 || i >= n)
        throw DimensionError("gather_rows: index " + std::to_string(i) + " out of range " + std::to_string(n));
  }
  Tensor<Scalar> out({batch, k, d});
  for (Index b = 0; b < batch; ++b)
    for (Index j = 0; j < k; ++j) out.matrix().row(b * k + j) = X.matrix().row(b * n + rows[b][j]);
  std::vector<std::vector<Index>> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x}, [x, idx = std::move(idx), n, k](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (Index j = 0; j < k; ++j)
        gx->matrix().row(static_cast<Index>(b) * n + idx[b][j]) += g.matrix().row(static_cast<Index>(b) * k + j);
  });
}

template <typename Scalar>
Var<Scalar> fill_masked(const Var<Scalar>& visible, const Var<Scalar>& mask_token,
                        std::span<const MaskPlan> plans) {
  same_tape(visible, mask_token);
  const auto& V = visible.value();
  require_rank(V, 3, "fill_masked");
  const Index batch = V.dim(0), nv = V.dim(1), d = V.dim(2);
  if (mask_token.value().size() != d) throw DimensionError("fill_masked: mask token width mismatch");
  if (static_cast<Index>(plans.size()) != batch) throw DimensionError("fill_masked: one plan per sample required");
  const Index n = plans[0].n_patches;
  for (const auto& p : plans)
    if (p.n_patches != n || static_cast<Index>(p.visible.size()) != nv)
      throw DimensionError("fill_masked: plan does not match " + shape_str(V.shape()));
  Tensor<Scalar> out({batch, n, d});
  const auto token = mask_token.value().data().matrix().transpose();
  for (Index b = 0; b < batch; ++b) {
    const auto& p = plans[static_cast<std::size_t>(b)];
    for (Index j = 0; j < nv; ++j) out.matrix().row(b * n + p.visible[j]) = V.matrix().row(b * nv + j);
    for (Index i : p.masked) out.matrix().row(b * n + i) = token;
  }
  std::vector<MaskPlan> kept(plans.begin(), plans.end());
  return visible.tape().record(
      std::move(out), {visible, mask_token},
      [visible, mask_token, kept = std::move(kept), n, nv](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gv = t.grad_buffer(visible);
        auto* gt = t.grad_buffer(mask_token);
        for (std::size_t b = 0; b < kept.size(); ++b) {
          const Index base = static_cast<Index>(b) * n;
          if (gv)
            for (Index j = 0; j < nv; ++j)
              gv->matrix().row(static_cast<Index>(b) * nv + j) += g.matrix().row(base + kept[b].visible[j]);
          if (gt)
            for (Index i : kept[b].masked) gt->data() += g.matrix().row(base + i).transpose().array();
        }
      });
}

template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                                 Index heads, Tensor<Scalar>* probs) {
  same_tape(q, k);
  same_tape(q, v);
  const auto& Q = q.value();
  require_rank(Q, 3, "multi_head_attention");
  if (k.shape() != Q.shape() || v.shape() != Q.shape())
    throw DimensionError("multi_head_attention: q/k/v shapes disagree");
  const Index batch = Q.dim(0), tokens = Q.dim(1), d = Q.dim(2);
  if (heads <= 0 || d % heads != 0)
    throw DimensionError("multi_head_attention: width " + std::to_string(d) + " not divisible into " +
                         std::to_string(heads) + " heads");
  const Index dh = d / heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Tensor<Scalar> attn({batch, heads, tokens, tokens});
  Tensor<Scalar> out(Q.shape());
  const auto Qm = Q.matrix();
  const auto Km = k.value().matrix();
  const auto Vm = v.value().matrix();
  auto Om = out.matrix();
  using Mat = RowMatrix<Scalar>;
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      Eigen::Map<Mat> P(attn.ptr() + ((b * heads + h) * tokens * tokens), tokens, tokens);
      P.noalias() = Qm.block(b * tokens, h * dh, tokens, dh) * Km.block(b * tokens, h * dh, tokens, dh).transpose();
      P *= inv_sqrt;
      for (Index r = 0; r < tokens; ++r) {
        auto row = P.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      Om.block(b * tokens, h * dh, tokens, dh).noalias() = P * Vm.block(b * tokens, h * dh, tokens, dh);
    }
  }
  if (probs) *probs = attn;
  return q.tape().record(
      std::move(out), {q, k, v},
      [q, k, v, attn = std::move(attn), batch, heads, tokens, dh, inv_sqrt](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gq = t.grad_buffer(q);
        auto* gk = t.grad_buffer(k);
        auto* gv = t.grad_buffer(v);
        const auto Qm = q.value().matrix();
        const auto Km = k.value().matrix();
        const auto Vm = v.value().matrix();
        const auto G = g.matrix();
        Mat dP(tokens, tokens);
        for (Index b = 0; b < batch; ++b) {
          for (Index h = 0; h < heads; ++h) {
            Eigen::Map<const Mat> P(attn.ptr() + ((b * heads + h) * tokens * tokens), tokens, tokens);
            const auto Gb = G.block(b * tokens, h * dh, tokens, dh);
            if (gv) gv->matrix().block(b * tokens, h * dh, tokens, dh).noalias() += P.transpose() * Gb;
            if (!gq && !gk) continue;
            dP.noalias() = Gb * Vm.block(b * tokens, h * dh, tokens, dh).transpose();
            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (dP.array() * P.array()).rowwise().sum();
            dP = (P.array() * (dP.array().colwise() - dots.array())).matrix() * inv_sqrt;
            if (gq) gq->matrix().block(b * tokens, h * dh, tokens, dh).noalias() += dP * Km.block(b * tokens, h * dh, tokens, dh);
            if (gk) gk->matrix().block(b * tokens, h * dh, tokens, dh).noalias() += dP.transpose() * Qm.block(b * tokens, h * dh, tokens, dh);
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> mse_masked(const Var<Scalar>& pred, const Tensor<Scalar>& target, std::span<const MaskPlan> plans) {
  const auto& P = pred.value();
  require_rank(P, 3, "mse_masked");
  if (target.shape() != P.shape())
    throw DimensionError("mse_masked: prediction " + shape_str(P.shape()) + " vs target " +
                         shape_str(target.shape()));
  const Index batch = P.dim(0), n = P.dim(1), d = P.dim(2);
  if (static_cast<Index>(plans.size()) != batch) throw DimensionError("mse_masked: one plan per sample required");
  Index count = 0;
  for (const auto& p : plans) {
    if (p.n_patches != n) throw DimensionError("mse_masked: plan covers " + std::to_string(p.n_patches) +
                                               " patches, prediction has " + std::to_string(n));
    for (Index i : p.masked)
      if (i < 0 || i >= n) throw DimensionError("mse_masked: masked index out of range");
    count += static_cast<Index>(p.masked.size());
  }
  if (count == 0) throw Error("mse_masked: empty masked set, loss undefined");
  const Scalar denom = static_cast<Scalar>(count * d);
  Scalar total = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index i : plans[static_cast<std::size_t>(b)].masked)
      total += (P.matrix().row(b * n + i) - target.matrix().row(b * n + i)).squaredNorm();
  Tensor<Scalar> out(Shape{});
  out[0] = total / denom;
  std::vector<std::vector<Index>> masked = masked_rows(plans);
  return pred.tape().record(
      std::move(out), {pred},
      [pred, target, masked = std::move(masked), n, denom](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gp = t.grad_buffer(pred);
        if (!gp) return;
        const Scalar c = Scalar(2) * g[0] / denom;
        const auto P = pred.value().matrix();
        for (std::size_t b = 0; b < masked.size(); ++b)
          for (Index i : masked[b]) {
            const Index r = static_cast<Index>(b) * n + i;
            gp->matrix().row(r) += c * (P.row(r) - target.matrix().row(r));
          }
      });
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  const auto& L = logits.value();
  require_rank(L, 2, "cross_entropy");
  const Index batch = L.dim(0), classes = L.dim(1);
  if (static_cast<Index>(labels.size()) != batch) throw DimensionError("cross_entropy: label count mismatch");
  RowMatrix<Scalar> probs = L.matrix();
  Scalar total = 0;
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) throw DimensionError("cross_entropy: label " + std::to_string(y) + " out of range");
    auto row = probs.row(b).array();
    const Scalar m = row.maxCoeff();
    row = (row - m).exp();
    const Scalar s = row.sum();
    total += std::log(s) + m - L.matrix()(b, y);
    row /= s;
  }
  Tensor<Scalar> out(Shape{});
  out[0] = total / static_cast<Scalar>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape().record(
      std::move(out), {logits},
      [logits, probs = std::move(probs), ys = std::move(ys), batch](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gl = t.grad_buffer(logits);
        if (!gl) return;
        RowMatrix<Scalar> d = probs;
        for (Index b = 0; b < batch; ++b) d(b, ys[static_cast<std::size_t>(b)]) -= Scalar(1);
        gl->matrix() += d * (g[0] / static_cast<Scalar>(batch));
      });
}

#define DEEPMIM_INSTANTIATE_OPS(S)                                                                        \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                                   \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                    \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                      \
  template Var<S> scale(const Var<S>&, S);                                                                \
  template Var<S> add_broadcast(const Var<S>&, const Var<S>&);                                            \
  template Var<S> softmax_rows(const Var<S>&);                                                            \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                             \
  template Var<S> gelu(const Var<S>&);                                                                    \
  template Var<S> sum(const Var<S>&);                                                                     \
  template Var<S> mean_tokens(const Var<S>&);                                                             \
  template Var<S> gather_rows(const Var<S>&, std::span<const std::vector<Index>>);                        \
  template Var<S> fill_masked(const Var<S>&, const Var<S>&, std::span<const MaskPlan>);                   \
  template Var<S> multi_head_attention(const Var<S>&, const Var<S>&, const Var<S>&, Index, Tensor<S>*);   \
  template Var<S> mse_masked(const Var<S>&, const Tensor<S>&, std::span<const MaskPlan>);                 \
  template Var<S> cross_entropy(const Var<S>&, std::span<const int>);

DEEPMIM_INSTANTIATE_OPS(float)
DEEPMIM_INSTANTIATE_OPS(double)

}  // namespace deepmim
