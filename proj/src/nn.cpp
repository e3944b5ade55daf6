#include "udac/nn.hpp"

#include <cmath>

namespace udac {

void MlpParams::validate() const {
  check(!weights.empty(), "mlp: no layers");
  check(weights.size() == biases.size(), "mlp: weight/bias count mismatch");
  for (std::size_t k = 0; k < weights.size(); ++k) {
    check(weights[k].rank() == 2, "mlp: weight rank must be 2");
    check(biases[k].numel() == weights[k].shape[0],
          "mlp: bias size mismatch at layer " + std::to_string(k));
    if (k + 1 < weights.size() && weights[k].shape[0] != weights[k + 1].shape[1])
      throw Error("mlp: layer " + std::to_string(k) + " out dim " +
                  std::to_string(weights[k].shape[0]) + " != layer " +
                  std::to_string(k + 1) + " in dim " +
                  std::to_string(weights[k + 1].shape[1]));
  }
}

MlpParams init_mlp(const std::vector<std::size_t>& dims, Activation act,
                   Rng& rng) {
  check(dims.size() >= 2, "init_mlp: need at least {in, out}");
  MlpParams p;
  p.activation = act;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    std::size_t in = dims[k], out = dims[k + 1];
    double bound = 1.0 / std::sqrt(double(in));
    Tensor w = Tensor::zeros({out, in});
    for (auto& v : w.data) v = rng.uniform(-bound, bound);
    Tensor b = Tensor::zeros({out});
    for (auto& v : b.data) v = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

MlpVars register_mlp(Tape& tape, const MlpParams& params, bool requires_grad) {
  MlpVars v;
  v.activation = params.activation;
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    v.w.push_back(tape.leaf(params.weights[k], requires_grad));
    v.b.push_back(tape.leaf(params.biases[k], requires_grad));
  }
  return v;
}

ValId forward_mlp(Tape& tape, const MlpVars& vars, ValId input,
                  bool activate_output) {
  ValId h = input;
  for (std::size_t k = 0; k < vars.w.size(); ++k) {
    h = tape.linear(h, vars.w[k], vars.b[k]);
    if (k + 1 < vars.w.size() || activate_output)
      h = tape.activation(h, vars.activation);
  }
  return h;
}

Tensor infer_mlp(const MlpParams& params, const Tensor& input,
                 bool activate_output) {
  check(input.rank() == 2, "infer_mlp: input must be rank 2");
  check(input.shape[1] == params.in_dim(),
        "infer_mlp: input has " + std::to_string(input.shape[1]) +
            " features but first layer expects " +
            std::to_string(params.in_dim()));
  Tensor h = input;
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    const Tensor& W = params.weights[k];
    const Tensor& B = params.biases[k];
    std::size_t m = h.shape[0], in = h.shape[1], out = W.shape[0];
    Tensor y = Tensor::zeros({m, out});
    for (std::size_t r = 0; r < m; ++r) {
      const double* hr = &h.data[r * in];
      double* yr = &y.data[r * out];
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = &W.data[o * in];
        double acc = B.data[o];
        for (std::size_t i = 0; i < in; ++i) acc += hr[i] * wo[i];
        yr[o] = acc;
      }
    }
    if (k + 1 < params.weights.size() || activate_output)
      for (auto& v : y.data) v = activate(v, params.activation);
    h = std::move(y);
  }
  return h;
}

Tensor sinusoidal_embedding(int i, std::size_t dim) {
  check(dim >= 2 && dim % 2 == 0, "sinusoidal_embedding: dim must be even");
  Tensor e = Tensor::zeros({dim});
  std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    double freq = std::pow(10000.0, -double(k) / double(half));
    e.data[2 * k] = std::sin(double(i) * freq);
    e.data[2 * k + 1] = std::cos(double(i) * freq);
  }
  return e;
}

void soft_update(Tensor& target, const Tensor& online, double mu) {
  check_same_shape(target, online, "soft_update");
  check(mu >= 0.0 && mu <= 1.0, "soft_update: mu must be in [0,1]");
  for (std::size_t i = 0; i < target.numel(); ++i)
    target.data[i] = (1.0 - mu) * target.data[i] + mu * online.data[i];
}

void soft_update(MlpParams& target, const MlpParams& online, double mu) {
  check(target.weights.size() == online.weights.size(),
        "soft_update: layer count mismatch");
  for (std::size_t k = 0; k < target.weights.size(); ++k) {
    soft_update(target.weights[k], online.weights[k], mu);
    soft_update(target.biases[k], online.biases[k], mu);
  }
}

void visit_mlp_params(MlpParams& p, const std::string& prefix,
                      const ParamVisitor& fn) {
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    fn(prefix + ".w" + std::to_string(k), p.weights[k]);
    fn(prefix + ".b" + std::to_string(k), p.biases[k]);
  }
}

}  // namespace udac
