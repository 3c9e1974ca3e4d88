#include "vuga/layers.hpp"

#include <torch/torch.h>

namespace F = torch::nn::functional;

namespace vuga {

ChannelLayerNormImpl::ChannelLayerNormImpl(int64_t channels, double eps)
    : channels_(channels), eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor ChannelLayerNormImpl::forward(const torch::Tensor& x) {
  VUGA_CHECK(x.dim() == 4 && x.size(1) == channels_, shape_error,
             "ChannelLayerNorm expects (B,", channels_, ",H,W), got ", x.sizes());
  auto nhwc = x.permute({0, 2, 3, 1});
  auto normed = F::layer_norm(
      nhwc, F::LayerNormFuncOptions({channels_}).weight(weight).bias(bias).eps(eps_));
  return normed.permute({0, 3, 1, 2});
}

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

// Bilinear sampling of x at per-tap absolute positions, with modulation.
//   x:   (B, C, H, W)
//   sy:  (B, T, H, W) absolute row coordinates (T = kernel taps)
//   sx:  (B, T, H, W) absolute column coordinates
//   mod: (B, T, H, W) per-tap scaling
// Returns (B, C, T, H, W). Out-of-range corners contribute zero, matching the
// zero padding of a standard convolution. The backward pass recomputes the
// corner gathers instead of saving them, which keeps training memory at
// O(B*C*H*W) rather than O(B*C*T*H*W).
struct DeformSample : torch::autograd::Function<DeformSample> {
  static torch::Tensor forward(AutogradContext* ctx, torch::Tensor x, torch::Tensor sy,
                               torch::Tensor sx, torch::Tensor mod) {
    ctx->save_for_backward({x, sy, sx, mod});
    torch::NoGradGuard no_grad;

    const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int64_t T = sy.size(1);
    auto x_flat = x.reshape({B, C, H * W});

    auto y0 = sy.floor();
    auto x0 = sx.floor();
    auto fy = sy - y0;
    auto fx = sx - x0;

    auto sampled = torch::zeros({B, C, T * H * W}, x.options());
    for (int cy = 0; cy <= 1; ++cy) {
      for (int cx = 0; cx <= 1; ++cx) {
        auto ry = y0 + cy;
        auto rx = x0 + cx;
        auto mask = (ry >= 0) & (ry < H) & (rx >= 0) & (rx < W);
        auto w = (cy ? fy : 1.0 - fy) * (cx ? fx : 1.0 - fx) * mask.to(x.dtype());
        auto idx = (ry.clamp(0, H - 1) * W + rx.clamp(0, W - 1)).to(torch::kLong);
        auto vals = x_flat.gather(2, idx.reshape({B, 1, T * H * W}).expand({B, C, T * H * W}));
        vals.mul_(w.reshape({B, 1, T * H * W}));
        sampled += vals;
      }
    }
    sampled = sampled.reshape({B, C, T, H, W});
    sampled *= mod.unsqueeze(1);
    return sampled;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    auto saved = ctx->get_saved_variables();
    auto x = saved[0], sy = saved[1], sx = saved[2], mod = saved[3];
    auto grad_out = grad_outputs[0];  // (B, C, T, H, W)

    const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int64_t T = sy.size(1);
    const int64_t P = T * H * W;
    auto x_flat = x.reshape({B, C, H * W});

    auto y0 = sy.floor();
    auto x0 = sx.floor();
    auto fy = (sy - y0).reshape({B, 1, P});
    auto fx = (sx - x0).reshape({B, 1, P});

    // grad w.r.t. the pre-modulation sample
    auto gm = (grad_out * mod.unsqueeze(1)).reshape({B, C, P});
    auto g = grad_out.reshape({B, C, P});

    auto grad_x = torch::zeros_like(x_flat);
    auto grad_sy = torch::zeros({B, 1, P}, x.options());
    auto grad_sx = torch::zeros({B, 1, P}, x.options());
    auto grad_mod = torch::zeros({B, 1, P}, x.options());

    for (int cy = 0; cy <= 1; ++cy) {
      for (int cx = 0; cx <= 1; ++cx) {
        auto ry = (y0 + cy).reshape({B, 1, P});
        auto rx = (x0 + cx).reshape({B, 1, P});
        auto mask = ((ry >= 0) & (ry < H) & (rx >= 0) & (rx < W)).to(x.dtype());
        auto wy = cy ? fy : 1.0 - fy;
        auto wx = cx ? fx : 1.0 - fx;
        auto idx = (ry.clamp(0, H - 1) * W + rx.clamp(0, W - 1)).to(torch::kLong);
        auto idx_full = idx.expand({B, C, P});
        auto vals = x_flat.gather(2, idx_full) * mask;

        grad_x.scatter_add_(2, idx_full, gm * (wy * wx * mask));
        grad_mod += (g * vals * (wy * wx)).sum(1, /*keepdim=*/true);
        // dw/dsy = +-wx, dw/dsx = +-wy
        grad_sy += (gm * vals * wx).sum(1, true) * (cy ? 1.0 : -1.0);
        grad_sx += (gm * vals * wy).sum(1, true) * (cx ? 1.0 : -1.0);
      }
    }
    return {grad_x.reshape_as(x), grad_sy.reshape({B, T, H, W}),
            grad_sx.reshape({B, T, H, W}), grad_mod.reshape({B, T, H, W})};
  }
};

}  // namespace

DeformConv2dImpl::DeformConv2dImpl(DeformConv2dOptions opts) : options(opts) {
  VUGA_CHECK(options.kernel % 2 == 1, config_error, "DCN kernel must be odd, got ",
             options.kernel);
  const int64_t t = options.kernel * options.kernel;
  const int64_t pred_channels = options.modulated ? 3 * t : 2 * t;
  offset_conv = register_module(
      "offset_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(options.in_channels,
                                                                pred_channels, options.kernel)
                                           .padding(options.kernel / 2)));
  // Zero offsets and unit modulation at start: the layer begins as a plain conv.
  torch::NoGradGuard no_grad;
  offset_conv->weight.zero_();
  offset_conv->bias.zero_();

  weight = register_parameter(
      "weight",
      torch::empty({options.out_channels, options.in_channels, options.kernel, options.kernel}));
  torch::nn::init::kaiming_uniform_(weight, std::sqrt(5.0));
  if (options.bias) {
    bias = register_parameter("bias", torch::zeros({options.out_channels}));
  }
}

torch::Tensor DeformConv2dImpl::forward(const torch::Tensor& x) {
  VUGA_CHECK(x.dim() == 4, shape_error, "DeformConv2d expects (B,C,H,W), got ", x.sizes());
  VUGA_CHECK(x.size(1) == options.in_channels, shape_error, "DeformConv2d expects ",
             options.in_channels, " channels, got ", x.size(1));
  const int64_t B = x.size(0), H = x.size(2), W = x.size(3);
  const int64_t k = options.kernel;
  const int64_t t = k * k;
  const int64_t pad = k / 2;

  auto pred = offset_conv(x);
  auto off_y = pred.narrow(1, 0, t);
  auto off_x = pred.narrow(1, t, t);
  torch::Tensor mod;
  if (options.modulated) {
    mod = 2.0 * torch::sigmoid(pred.narrow(1, 2 * t, t));
  } else {
    mod = torch::ones({B, t, H, W}, x.options());
  }

  auto opts = x.options();
  auto tap = torch::arange(k, opts) - static_cast<double>(pad);
  auto tap_y = tap.reshape({k, 1}).expand({k, k}).reshape({1, t, 1, 1});
  auto tap_x = tap.reshape({1, k}).expand({k, k}).reshape({1, t, 1, 1});
  auto grid_y = torch::arange(H, opts).reshape({1, 1, H, 1});
  auto grid_x = torch::arange(W, opts).reshape({1, 1, 1, W});

  auto sy = grid_y + tap_y + off_y;
  auto sx = grid_x + tap_x + off_x;

  auto sampled = DeformSample::apply(x, sy, sx, mod);  // (B, C, T, H, W)
  // Contract (C, T) against the flattened kernel: one GEMM per batch entry.
  auto cols = sampled.reshape({B, options.in_channels * t, H * W});
  auto out = torch::matmul(weight.reshape({options.out_channels, options.in_channels * t}), cols)
                 .reshape({B, options.out_channels, H, W});
  if (bias.defined()) out = out + bias.reshape({1, options.out_channels, 1, 1});
  return out;
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  VUGA_CHECK(x.dim() == 4, shape_error, "upsample2x expects (B,C,H,W), got ", x.sizes());
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

void zero_bias_init(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      if (conv->options.bias()) conv->bias.zero_();
    } else if (auto* linear = m->as<torch::nn::Linear>()) {
      if (linear->options.bias()) linear->bias.zero_();
    }
  }
}

uint64_t parameter_checksum(const torch::nn::Module& module) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : module.parameters()) {
    auto flat = p.detach().contiguous().cpu();
    h = fnv1a(flat.data_ptr(), flat.numel() * flat.element_size(), h);
  }
  return h;
}

}  // namespace vuga
