#include "udac/tape.hpp"

#include <algorithm>
#include <cmath>

namespace udac {

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double mish(double x) { return x * std::tanh(softplus(x)); }

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double mish_grad(double x) {
  double t = std::tanh(softplus(x));
  return t + x * (1.0 - t * t) * sigmoid(x);
}

}  // namespace

double activate(double x, Activation a) {
  switch (a) {
    case Activation::Mish: return mish(x);
    case Activation::Relu: return x > 0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

double activate_grad(double x, Activation a) {
  switch (a) {
    case Activation::Mish: return mish_grad(x);
    case Activation::Relu: return x > 0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

ValId Tape::leaf(const Tensor& t, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.value = t;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

ValId Tape::leaf_moved(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(t);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

ValId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return ValId(nodes_.size() - 1);
}

bool Tape::any_requires(std::span<const ValId> ids) const {
  for (auto id : ids)
    if (nodes_[id].requires_grad) return true;
  return false;
}

ValId Tape::linear(ValId x, ValId w, ValId b) {
  const Tensor& X = nodes_[x].value;
  const Tensor& W = nodes_[w].value;
  const Tensor& B = nodes_[b].value;
  check(X.rank() == 2, "linear: input must be rank 2, got " + X.shape_str());
  check(W.rank() == 2, "linear: weight must be rank 2, got " + W.shape_str());
  std::size_t m = X.shape[0], in = X.shape[1];
  std::size_t out = W.shape[0];
  if (W.shape[1] != in)
    throw Error("linear: input has " + std::to_string(in) +
                " features but weight expects " + std::to_string(W.shape[1]));
  if (B.numel() != out)
    throw Error("linear: bias size " + std::to_string(B.numel()) +
                " != out dim " + std::to_string(out));

  Tensor Y = Tensor::zeros({m, out});
  // y[r,:] = b; y[r,o] += sum_i x[r,i] w[o,i]
  for (std::size_t r = 0; r < m; ++r) {
    double* yr = &Y.data[r * out];
    for (std::size_t o = 0; o < out; ++o) yr[o] = B.data[o];
    const double* xr = &X.data[r * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = &W.data[o * in];
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      yr[o] += acc;
    }
  }
  Node n;
  n.op = Op::Linear;
  n.inputs = {x, w, b};
  n.value = std::move(Y);
  n.requires_grad = any_requires(n.inputs);
  return push(std::move(n));
}

ValId Tape::add(ValId a, ValId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  check_same_shape(A, B, "add");
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.numel(); ++i) Y.data[i] += B.data[i];
  Node n;
  n.op = Op::Add;
  n.inputs = {a, b};
  n.value = std::move(Y);
  n.requires_grad = any_requires(n.inputs);
  return push(std::move(n));
}

ValId Tape::sub(ValId a, ValId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  check_same_shape(A, B, "sub");
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.numel(); ++i) Y.data[i] -= B.data[i];
  Node n;
  n.op = Op::Sub;
  n.inputs = {a, b};
  n.value = std::move(Y);
  n.requires_grad = any_requires(n.inputs);
  return push(std::move(n));
}

ValId Tape::mul(ValId a, ValId b) {
  const Tensor& A = nodes_[a].value;
  const Tensor& B = nodes_[b].value;
  check_same_shape(A, B, "mul");
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.numel(); ++i) Y.data[i] *= B.data[i];
  Node n;
  n.op = Op::Mul;
  n.inputs = {a, b};
  n.value = std::move(Y);
  n.requires_grad = any_requires(n.inputs);
  return push(std::move(n));
}

ValId Tape::scale(ValId x, double c) {
  Tensor Y = nodes_[x].value;
  for (auto& v : Y.data) v *= c;
  Node n;
  n.op = Op::Scale;
  n.inputs = {x};
  n.c0 = c;
  n.value = std::move(Y);
  n.requires_grad = nodes_[x].requires_grad;
  return push(std::move(n));
}

ValId Tape::activation(ValId x, Activation a) {
  Tensor Y = nodes_[x].value;
  for (auto& v : Y.data) v = activate(v, a);
  Node n;
  n.op = Op::Act;
  n.inputs = {x};
  n.act = a;
  n.value = std::move(Y);
  n.requires_grad = nodes_[x].requires_grad;
  return push(std::move(n));
}

ValId Tape::clip(ValId x, double lo, double hi) {
  Tensor Y = nodes_[x].value;
  for (auto& v : Y.data) v = std::clamp(v, lo, hi);
  Node n;
  n.op = Op::Clip;
  n.inputs = {x};
  n.c0 = lo;
  n.c1 = hi;
  n.value = std::move(Y);
  n.requires_grad = nodes_[x].requires_grad;
  return push(std::move(n));
}

ValId Tape::concat_cols(std::span<const ValId> parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  std::size_t m = nodes_[parts[0]].value.shape.at(0);
  std::size_t total = 0;
  for (auto id : parts) {
    const Tensor& T = nodes_[id].value;
    check(T.rank() == 2, "concat_cols: rank-2 inputs required");
    check(T.shape[0] == m, "concat_cols: row count mismatch");
    total += T.shape[1];
  }
  Tensor Y = Tensor::zeros({m, total});
  std::size_t off = 0;
  for (auto id : parts) {
    const Tensor& T = nodes_[id].value;
    std::size_t c = T.shape[1];
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(&T.data[r * c], c, &Y.data[r * total + off]);
    off += c;
  }
  Node n;
  n.op = Op::Concat;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = std::move(Y);
  n.requires_grad = any_requires(parts);
  return push(std::move(n));
}

ValId Tape::repeat_rows(ValId x, std::size_t times) {
  const Tensor& X = nodes_[x].value;
  check(X.rank() == 2, "repeat_rows: rank-2 input required");
  check(times >= 1, "repeat_rows: times must be >= 1");
  std::size_t m = X.shape[0], c = X.shape[1];
  Tensor Y = Tensor::zeros({m * times, c});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(&X.data[r * c], c, &Y.data[(r * times + t) * c]);
  Node n;
  n.op = Op::RepeatRows;
  n.inputs = {x};
  n.k0 = times;
  n.value = std::move(Y);
  n.requires_grad = nodes_[x].requires_grad;
  return push(std::move(n));
}

ValId Tape::sum_all(ValId x) {
  double s = 0.0;
  for (double v : nodes_[x].value.data) s += v;
  Node n;
  n.op = Op::SumAll;
  n.inputs = {x};
  n.value = Tensor::scalar(s);
  n.requires_grad = nodes_[x].requires_grad;
  return push(std::move(n));
}

ValId Tape::mean_all(ValId x) {
  const Tensor& X = nodes_[x].value;
  check(X.numel() > 0, "mean_all: empty tensor");
  double s = 0.0;
  for (double v : X.data) s += v;
  Node n;
  n.op = Op::MeanAll;
  n.inputs = {x};
  n.value = Tensor::scalar(s / double(X.numel()));
  n.requires_grad = nodes_[x].requires_grad;
  return push(std::move(n));
}

ValId Tape::pairwise_target_minus(ValId online, ValId target) {
  const Tensor& O = nodes_[online].value;
  const Tensor& T = nodes_[target].value;
  check(O.rank() == 2 && T.rank() == 2, "pairwise_target_minus: rank-2 inputs");
  check(O.shape[0] == T.shape[0], "pairwise_target_minus: row mismatch");
  std::size_t m = O.shape[0], N = O.shape[1], K = T.shape[1];
  Tensor D = Tensor::zeros({m, N * K});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < K; ++j)
        D.data[r * N * K + i * K + j] = T.data[r * K + j] - O.data[r * N + i];
  Node n;
  n.op = Op::PairwiseTargetMinus;
  n.inputs = {online, target};
  n.value = std::move(D);
  n.requires_grad = any_requires(n.inputs);
  return push(std::move(n));
}

ValId Tape::quantile_huber(ValId delta, Tensor tau, double kappa) {
  check(kappa > 0.0, "quantile_huber: kappa must be > 0");
  const Tensor& D = nodes_[delta].value;
  check(tau.numel() == D.numel(), "quantile_huber: tau size mismatch");
  Tensor Y = D;
  for (std::size_t i = 0; i < Y.numel(); ++i) {
    double d = D.data[i];
    double t = tau.data[i];
    double w = std::abs((d < 0 ? 1.0 : 0.0) - t);
    double a = std::abs(d);
    Y.data[i] = a < kappa ? w * d * d / (2.0 * kappa) : w * (a - kappa / 2.0);
  }
  Node n;
  n.op = Op::QuantileHuber;
  n.inputs = {delta};
  n.c0 = kappa;
  n.aux = std::move(tau);
  n.value = std::move(Y);
  n.requires_grad = nodes_[delta].requires_grad;
  return push(std::move(n));
}

namespace {

// Stable per-row log-sum-exp and softmax into `soft`.
void row_softmax(const double* logits, std::size_t C, double* soft) {
  double mx = logits[0];
  for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits[c]);
  double z = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    soft[c] = std::exp(logits[c] - mx);
    z += soft[c];
  }
  for (std::size_t c = 0; c < C; ++c) soft[c] /= z;
}

double row_logsumexp(const double* logits, std::size_t C) {
  double mx = logits[0];
  for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits[c]);
  double z = 0.0;
  for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[c] - mx);
  return mx + std::log(z);
}

}  // namespace

ValId Tape::cross_entropy_with_logits(ValId logits, std::vector<int> labels) {
  const Tensor& L = nodes_[logits].value;
  check(L.rank() == 2, "cross_entropy: logits must be rank 2");
  std::size_t m = L.shape[0], C = L.shape[1];
  check(labels.size() == m, "cross_entropy: one label per row required");
  for (int l : labels)
    check(l >= 0 && std::size_t(l) < C,
          "cross_entropy: unknown label " + std::to_string(l));
  Tensor Y = Tensor::zeros({m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* lr = &L.data[r * C];
    Y.data[r] = row_logsumexp(lr, C) - lr[labels[r]];
  }
  Node n;
  n.op = Op::CrossEntropy;
  n.inputs = {logits};
  n.labels = std::move(labels);
  n.value = std::move(Y);
  n.requires_grad = nodes_[logits].requires_grad;
  return push(std::move(n));
}

ValId Tape::log_prob_class(ValId logits, std::size_t cls) {
  const Tensor& L = nodes_[logits].value;
  check(L.rank() == 2, "log_prob_class: logits must be rank 2");
  std::size_t m = L.shape[0], C = L.shape[1];
  check(cls < C, "log_prob_class: class out of range");
  Tensor Y = Tensor::zeros({m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* lr = &L.data[r * C];
    Y.data[r] = lr[cls] - row_logsumexp(lr, C);
  }
  Node n;
  n.op = Op::LogProbClass;
  n.inputs = {logits};
  n.k0 = cls;
  n.value = std::move(Y);
  n.requires_grad = nodes_[logits].requires_grad;
  return push(std::move(n));
}

Tensor& Tape::grad_buf(ValId id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(ValId id) const {
  const Node& n = nodes_[id];
  if (!n.grad_alloc) {
    // Leaves untouched by the loss have zero gradient of their own shape.
    static thread_local Tensor zero;
    zero = Tensor::zeros(n.value.shape);
    return zero;
  }
  return n.grad;
}

void Tape::backward(ValId loss) {
  check(nodes_[loss].value.numel() == 1,
        "backward: loss must be scalar, got " + nodes_[loss].value.shape_str());
  grad_buf(loss).data[0] = 1.0;
  for (ValId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.grad_alloc || n.op == Op::Leaf) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(ValId id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Linear: {
      ValId xi = n.inputs[0], wi = n.inputs[1], bi = n.inputs[2];
      const Tensor& X = nodes_[xi].value;
      const Tensor& W = nodes_[wi].value;
      std::size_t m = X.shape[0], in = X.shape[1], out = W.shape[0];
      if (nodes_[xi].requires_grad) {
        Tensor& gx = grad_buf(xi);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gr = &g.data[r * out];
          double* gxr = &gx.data[r * in];
          for (std::size_t o = 0; o < out; ++o) {
            double go = gr[o];
            if (go == 0.0) continue;
            const double* wo = &W.data[o * in];
            for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wo[i];
          }
        }
      }
      if (nodes_[wi].requires_grad) {
        Tensor& gw = grad_buf(wi);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gr = &g.data[r * out];
          const double* xr = &X.data[r * in];
          for (std::size_t o = 0; o < out; ++o) {
            double go = gr[o];
            if (go == 0.0) continue;
            double* gwo = &gw.data[o * in];
            for (std::size_t i = 0; i < in; ++i) gwo[i] += go * xr[i];
          }
        }
      }
      if (nodes_[bi].requires_grad) {
        Tensor& gb = grad_buf(bi);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t o = 0; o < out; ++o)
            gb.data[o] += g.data[r * out + o];
      }
      break;
    }
    case Op::Add: {
      for (int k = 0; k < 2; ++k) {
        ValId in = n.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        Tensor& gi = grad_buf(in);
        for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += g.data[i];
      }
      break;
    }
    case Op::Sub: {
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
      }
      if (nodes_[n.inputs[1]].requires_grad) {
        Tensor& gb = grad_buf(n.inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
      }
      break;
    }
    case Op::Mul: {
      const Tensor& A = nodes_[n.inputs[0]].value;
      const Tensor& B = nodes_[n.inputs[1]].value;
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor& ga = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          ga.data[i] += g.data[i] * B.data[i];
      }
      if (nodes_[n.inputs[1]].requires_grad) {
        Tensor& gb = grad_buf(n.inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          gb.data[i] += g.data[i] * A.data[i];
      }
      break;
    }
    case Op::Scale: {
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor& gx = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          gx.data[i] += g.data[i] * n.c0;
      }
      break;
    }
    case Op::Act: {
      if (nodes_[n.inputs[0]].requires_grad) {
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& gx = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          gx.data[i] += g.data[i] * activate_grad(X.data[i], n.act);
      }
      break;
    }
    case Op::Clip: {
      if (nodes_[n.inputs[0]].requires_grad) {
        const Tensor& X = nodes_[n.inputs[0]].value;
        Tensor& gx = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          if (X.data[i] > n.c0 && X.data[i] < n.c1)
            gx.data[i] += g.data[i];
      }
      break;
    }
    case Op::Concat: {
      std::size_t m = n.value.shape[0], total = n.value.shape[1];
      std::size_t off = 0;
      for (ValId in : n.inputs) {
        std::size_t c = nodes_[in].value.shape[1];
        if (nodes_[in].requires_grad) {
          Tensor& gi = grad_buf(in);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t k = 0; k < c; ++k)
              gi.data[r * c + k] += g.data[r * total + off + k];
        }
        off += c;
      }
      break;
    }
    case Op::RepeatRows: {
      if (nodes_[n.inputs[0]].requires_grad) {
        const Tensor& X = nodes_[n.inputs[0]].value;
        std::size_t m = X.shape[0], c = X.shape[1];
        Tensor& gx = grad_buf(n.inputs[0]);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t t = 0; t < n.k0; ++t)
            for (std::size_t k = 0; k < c; ++k)
              gx.data[r * c + k] += g.data[(r * n.k0 + t) * c + k];
      }
      break;
    }
    case Op::SumAll: {
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor& gx = grad_buf(n.inputs[0]);
        for (auto& v : gx.data) v += g.data[0];
      }
      break;
    }
    case Op::MeanAll: {
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor& gx = grad_buf(n.inputs[0]);
        double s = g.data[0] / double(gx.numel());
        for (auto& v : gx.data) v += s;
      }
      break;
    }
    case Op::PairwiseTargetMinus: {
      const Tensor& O = nodes_[n.inputs[0]].value;
      const Tensor& T = nodes_[n.inputs[1]].value;
      std::size_t m = O.shape[0], N = O.shape[1], K = T.shape[1];
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor& go = grad_buf(n.inputs[0]);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t i = 0; i < N; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < K; ++j)
              acc += g.data[r * N * K + i * K + j];
            go.data[r * N + i] -= acc;
          }
      }
      if (nodes_[n.inputs[1]].requires_grad) {
        Tensor& gt = grad_buf(n.inputs[1]);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < K; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < N; ++i)
              acc += g.data[r * N * K + i * K + j];
            gt.data[r * K + j] += acc;
          }
      }
      break;
    }
    case Op::QuantileHuber: {
      if (nodes_[n.inputs[0]].requires_grad) {
        const Tensor& D = nodes_[n.inputs[0]].value;
        Tensor& gd = grad_buf(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          double d = D.data[i];
          double w = std::abs((d < 0 ? 1.0 : 0.0) - n.aux.data[i]);
          double local = std::abs(d) < n.c0
                             ? w * d / n.c0
                             : w * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0);
          gd.data[i] += g.data[i] * local;
        }
      }
      break;
    }
    case Op::CrossEntropy: {
      if (nodes_[n.inputs[0]].requires_grad) {
        const Tensor& L = nodes_[n.inputs[0]].value;
        std::size_t m = L.shape[0], C = L.shape[1];
        Tensor& gl = grad_buf(n.inputs[0]);
        std::vector<double> soft(C);
        for (std::size_t r = 0; r < m; ++r) {
          row_softmax(&L.data[r * C], C, soft.data());
          for (std::size_t c = 0; c < C; ++c) {
            double onehot = (int(c) == n.labels[r]) ? 1.0 : 0.0;
            gl.data[r * C + c] += g.data[r] * (soft[c] - onehot);
          }
        }
      }
      break;
    }
    case Op::LogProbClass: {
      if (nodes_[n.inputs[0]].requires_grad) {
        const Tensor& L = nodes_[n.inputs[0]].value;
        std::size_t m = L.shape[0], C = L.shape[1];
        Tensor& gl = grad_buf(n.inputs[0]);
        std::vector<double> soft(C);
        for (std::size_t r = 0; r < m; ++r) {
          row_softmax(&L.data[r * C], C, soft.data());
          for (std::size_t c = 0; c < C; ++c) {
            double onehot = (c == n.k0) ? 1.0 : 0.0;
            gl.data[r * C + c] += g.data[r] * (onehot - soft[c]);
          }
        }
      }
      break;
    }
  }
}

}  // namespace udac
