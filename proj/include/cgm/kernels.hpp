#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "cgm/tensor.hpp"

// Structural-equation primitives. Every kernel is a pure function with a
// fixed summation order, so repeated calls give bit-identical results.
namespace cgm::kernels {

enum class Activation { Identity, Relu, Tanh, Sigmoid };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation a);

/// a[m,k] * b[k,n]; inner products accumulate in ascending k.
Tensor matmul(const Tensor& a, const Tensor& b);

struct ConvTransposeParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t output_padding = 0;
};

std::size_t conv_transpose_out_size(std::size_t in, std::size_t kernel, const ConvTransposeParams& p);

/// Fractional-stride convolution by scatter-accumulate.
/// input [N,Cin,H,W], kernel [Cin,Cout,kh,kw], optional bias [Cout].
/// Output side is (H-1)*stride - 2*pad + kh + output_padding.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const ConvTransposeParams& params,
                        const Tensor* bias = nullptr);

Tensor apply_activation(const Tensor& x, Activation kind);

/// Per-channel (x - mean) / sqrt(var + eps) * gamma + beta over [N,C,H,W].
Tensor batchnorm_infer(const Tensor& x, const Tensor& mean, const Tensor& var, const Tensor& gamma,
                       const Tensor& beta, float eps);

}  // namespace cgm::kernels
