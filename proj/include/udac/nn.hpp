#pragma once

#include <functional>
#include <string>
#include <vector>

#include "udac/rng.hpp"
#include "udac/tape.hpp"
#include "udac/tensor.hpp"

namespace udac {

/// Fully-connected stack: weights[k] is [out_k, in_k], activation applied
/// between layers (never after the last one).
struct MlpParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Activation activation = Activation::Mish;

  std::size_t n_layers() const { return weights.size(); }
  std::size_t in_dim() const { return weights.front().shape[1]; }
  std::size_t out_dim() const { return weights.back().shape[0]; }
  void validate() const;
};

/// Layer sizes {in, h1, ..., out}; weights and biases uniform in
/// [-1/sqrt(fan_in), +1/sqrt(fan_in)].
MlpParams init_mlp(const std::vector<std::size_t>& dims, Activation act,
                   Rng& rng);

/// Parameter leaves of one MLP registered on a tape.
struct MlpVars {
  std::vector<ValId> w;
  std::vector<ValId> b;
  Activation activation = Activation::Mish;
};

MlpVars register_mlp(Tape& tape, const MlpParams& params, bool requires_grad);

/// Forward pass through registered parameters; records on the tape.
ValId forward_mlp(Tape& tape, const MlpVars& vars, ValId input,
                  bool activate_output = false);

/// Tape-free forward pass for inference (same kernels as the tape path).
Tensor infer_mlp(const MlpParams& params, const Tensor& input,
                 bool activate_output = false);

/// Interleaved sin/cos features of an integer timestep at geometrically
/// spaced frequencies; dim must be even.
Tensor sinusoidal_embedding(int i, std::size_t dim);

/// target <- (1 - mu) * target + mu * online, elementwise.
void soft_update(Tensor& target, const Tensor& online, double mu);
void soft_update(MlpParams& target, const MlpParams& online, double mu);

/// Callback-style named parameter traversal, used by optimizers and
/// checkpoints. Names look like "<prefix>.w0", "<prefix>.b0", ...
using ParamVisitor = std::function<void(const std::string&, Tensor&)>;
void visit_mlp_params(MlpParams& p, const std::string& prefix,
                      const ParamVisitor& fn);

}  // namespace udac
