#include "cgm/kernels.hpp"

#include <cmath>

#include "cgm/errors.hpp"

namespace cgm::kernels {

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t t = 0; t < k; ++t) acc += pa[i * k + t] * pb[t * n + j];
      po[i * n + j] = acc;
    }
  }
  return out;
}

std::size_t conv_transpose_out_size(std::size_t in, std::size_t kernel, const ConvTransposeParams& p) {
  const long long size = static_cast<long long>(in - 1) * static_cast<long long>(p.stride) -
                         2LL * static_cast<long long>(p.pad) + static_cast<long long>(kernel) +
                         static_cast<long long>(p.output_padding);
  if (size < 1)
    throw ConfigError("conv_transpose2d: non-positive output size " + std::to_string(size) + " (in=" +
                      std::to_string(in) + ", kernel=" + std::to_string(kernel) + ", stride=" +
                      std::to_string(p.stride) + ", pad=" + std::to_string(p.pad) + ")");
  return static_cast<std::size_t>(size);
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const ConvTransposeParams& params,
                        const Tensor* bias) {
  if (params.stride < 1) throw ConfigError("conv_transpose2d: stride must be >= 1");
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(0))
    throw DimensionError("conv_transpose2d: input " + shape_to_string(input.shape()) + " incompatible with kernel " +
                         shape_to_string(kernel.shape()));
  const std::size_t n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw DimensionError("conv_transpose2d: bias " + shape_to_string(bias->shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
  const std::size_t oh = conv_transpose_out_size(h, kh, params);
  const std::size_t ow = conv_transpose_out_size(w, kw, params);
  const long long stride = static_cast<long long>(params.stride);
  const long long pad = static_cast<long long>(params.pad);

  Tensor out({n_batch, cout, oh, ow});
  const float* in = input.data().data();
  const float* k = kernel.data().data();
  float* o = out.data().data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      float* oplane = o + (n * cout + co) * oh * ow;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const float* iplane = in + (n * cin + ci) * h * w;
        const float* kplane = k + (ci * cout + co) * kh * kw;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const float v = iplane[y * w + x];
            const long long oy0 = static_cast<long long>(y) * stride - pad;
            const long long ox0 = static_cast<long long>(x) * stride - pad;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long long oy = oy0 + static_cast<long long>(ky);
              if (oy < 0 || oy >= static_cast<long long>(oh)) continue;
              float* orow = oplane + static_cast<std::size_t>(oy) * ow;
              const float* krow = kplane + ky * kw;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long long ox = ox0 + static_cast<long long>(kx);
                if (ox < 0 || ox >= static_cast<long long>(ow)) continue;
                orow[ox] += v * krow[kx];
              }
            }
          }
        }
      }
      if (bias) {
        const float b = (*bias)[co];
        for (std::size_t i = 0; i < oh * ow; ++i) oplane[i] += b;
      }
    }
  }
  return out;
}

Tensor apply_activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  auto d = out.data();
  switch (kind) {
    case Activation::Identity: break;
    case Activation::Relu:
      for (float& v : d) v = v > 0.0f ? v : 0.0f;
      break;
    case Activation::Tanh:
      for (float& v : d) v = std::tanh(v);
      break;
    case Activation::Sigmoid:
      for (float& v : d) v = 1.0f / (1.0f + std::exp(-v));
      break;
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& x, const Tensor& mean, const Tensor& var, const Tensor& gamma,
                       const Tensor& beta, float eps) {
  if (x.rank() != 4) throw DimensionError("batchnorm_infer: expected NCHW input, got " + shape_to_string(x.shape()));
  const std::size_t c = x.dim(1);
  for (const Tensor* t : {&mean, &var, &gamma, &beta})
    if (t->size() != c)
      throw DimensionError("batchnorm_infer: parameter " + shape_to_string(t->shape()) + " does not match " +
                           std::to_string(c) + " channels of " + shape_to_string(x.shape()));
  if (eps < 0.0f) throw ConfigError("batchnorm_infer: eps must be non-negative");
  Tensor out = x;
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (var[ch] < 0.0f) throw ConfigError("batchnorm_infer: negative variance in channel " + std::to_string(ch));
      const float scale = gamma[ch] / std::sqrt(var[ch] + eps);
      float* p = out.data().data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean[ch]) * scale + beta[ch];
    }
  }
  return out;
}

}  // namespace cgm::kernels
