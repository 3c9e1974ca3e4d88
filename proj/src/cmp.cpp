#include "vuga/cmp.hpp"

namespace F = torch::nn::functional;

namespace vuga {

void CmpStageConfig::validate() const {
  VUGA_CHECK(in_channels > 0 && fusion_channels > 0, config_error,
             "channel counts must be positive");
  VUGA_CHECK(in_channels % global_reduction == 0, config_error, "in_channels (", in_channels,
             ") must be divisible by global_reduction (", global_reduction, ")");
  for (int64_t k : multiscale_kernels)
    VUGA_CHECK(k % 2 == 1, config_error, "multiscale kernels must be odd, got ", k);
  VUGA_CHECK(local_dilation >= 1, config_error, "local_dilation must be >= 1");
}

CmpStageImpl::CmpStageImpl(CmpStageConfig cfg) : config(cfg) {
  config.validate();
  const int64_t c = config.in_channels;
  const int64_t fused = config.fusion_channels;
  const int64_t reduced = c / config.global_reduction;

  DeformConv2dOptions dcn_opts(c, c);
  dcn_opts.kernel = config.dcn_kernel;
  dcn_opts.modulated = config.modulated_dcn;
  dcn = register_module("dcn", DeformConv2d(dcn_opts));
  dcn_norm = register_module("dcn_norm", ChannelLayerNorm(c));

  local_qkv = register_module("local_qkv",
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 3 * c, 1)));
  local_dw = register_module(
      "local_dw", torch::nn::Conv2d(torch::nn::Conv2dOptions(3 * c, 3 * c, 3)
                                        .padding(config.local_dilation)
                                        .dilation(config.local_dilation)
                                        .groups(3 * c)));
  local_proj = register_module("local_proj",
                               torch::nn::Conv2d(torch::nn::Conv2dOptions(c, fused, 1)));

  // Phi starts as LayerNorm(D) + D: lambda=1, beta=0, P=1, Px=1.
  gb_lambda = register_parameter("gb_lambda", torch::ones({c}));
  gb_beta = register_parameter("gb_beta", torch::zeros({c}));
  gb_p = register_parameter("gb_p", torch::ones({c}));
  gb_px = register_parameter("gb_px", torch::ones({c}));
  gb_reduce = register_module("gb_reduce",
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(c, reduced, 1)));
  auto dw = [&](int64_t k) {
    return torch::nn::Conv2d(
        torch::nn::Conv2dOptions(reduced, reduced, k).padding(k / 2).groups(reduced));
  };
  gb_dw5 = register_module("gb_dw5", dw(config.multiscale_kernels[0]));
  gb_dw7 = register_module("gb_dw7", dw(config.multiscale_kernels[1]));
  gb_dw9 = register_module("gb_dw9", dw(config.multiscale_kernels[2]));
  gb_expand = register_module("gb_expand",
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(reduced, c, 1)));
  gb_proj = register_module("gb_proj",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(c, fused, 1)));
  zero_bias_init(*this);
}

torch::Tensor CmpStageImpl::refine(const torch::Tensor& f) {
  VUGA_CHECK(f.dim() == 4 && f.size(1) == config.in_channels, shape_error, "CMP stage expects (B,",
             config.in_channels, ",H,W), got ", f.sizes());
  return torch::gelu(dcn_norm(dcn(f)));
}

CmpStageImpl::Trace CmpStageImpl::run(const torch::Tensor& f, bool want_trace) {
  Trace trace;
  auto d = refine(f);
  const int64_t B = d.size(0), c = config.in_channels, H = d.size(2), W = d.size(3);
  VUGA_CHECK(H * W > 0, shape_error, "empty spatial dims");

  // Local branch: transposed (channel-token) attention over the DCN-refined map.
  {
    auto qkv = local_dw(local_qkv(d));
    auto chunks = qkv.chunk(3, 1);
    auto q = chunks[0].reshape({B, c, H * W});
    auto k = chunks[1].reshape({B, c, H * W});
    auto v = chunks[2].reshape({B, c, H * W});
    q = F::normalize(q, F::NormalizeFuncOptions().p(2).dim(2));
    k = F::normalize(k, F::NormalizeFuncOptions().p(2).dim(2));
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    auto attention = torch::softmax(torch::bmm(q, k.transpose(1, 2)) * scale, /*dim=*/2);
    auto attended = torch::bmm(attention, v).reshape({B, c, H, W});
    trace.local_out = local_proj(attended + d);
    if (want_trace) trace.attention = attention;
  }

  // Global branch: spatially normalized blend, channel reduction, multiscale
  // depthwise perception, then expansion back with a residual.
  {
    auto mu = d.mean({2, 3}, /*keepdim=*/true);
    auto var = d.var({2, 3}, /*unbiased=*/false, /*keepdim=*/true);
    auto shape = std::vector<int64_t>{1, c, 1, 1};
    auto phi = (gb_lambda.reshape(shape) * (d - mu) / torch::sqrt(var + norm_eps) +
                gb_beta.reshape(shape)) *
                   gb_p.reshape(shape) +
               d * gb_px.reshape(shape);
    auto r = gb_reduce(phi);
    auto b5 = gb_dw5(r);
    auto b7 = gb_dw7(r);
    auto b9 = gb_dw9(r);
    auto y = (b5 + b7 + b9) / 3.0;
    trace.global_out = gb_proj(gb_expand(y) + d);
    if (want_trace) {
      trace.branch5 = b5;
      trace.branch7 = b7;
      trace.branch9 = b9;
      trace.multiscale = y;
    }
  }

  trace.output = trace.local_out + trace.global_out;
  if (want_trace) trace.refined = d;
  return trace;
}

torch::Tensor CmpStageImpl::forward(const torch::Tensor& f) { return run(f, false).output; }

CmpStageImpl::Trace CmpStageImpl::forward_trace(const torch::Tensor& f) { return run(f, true); }

torch::Tensor CmpStageImpl::local_branch(const torch::Tensor& refined) {
  // Standalone entry for tests; forward() fuses this with the global branch.
  auto saved = refined;
  auto qkv = local_dw(local_qkv(saved));
  const int64_t B = saved.size(0), c = config.in_channels, H = saved.size(2), W = saved.size(3);
  auto chunks = qkv.chunk(3, 1);
  auto q = F::normalize(chunks[0].reshape({B, c, H * W}), F::NormalizeFuncOptions().p(2).dim(2));
  auto k = F::normalize(chunks[1].reshape({B, c, H * W}), F::NormalizeFuncOptions().p(2).dim(2));
  auto v = chunks[2].reshape({B, c, H * W});
  const double scale = 1.0 / std::sqrt(static_cast<double>(c));
  auto attention = torch::softmax(torch::bmm(q, k.transpose(1, 2)) * scale, 2);
  auto attended = torch::bmm(attention, v).reshape({B, c, H, W});
  return local_proj(attended + saved);
}

torch::Tensor CmpStageImpl::global_branch(const torch::Tensor& refined) {
  const int64_t c = config.in_channels;
  auto mu = refined.mean({2, 3}, true);
  auto var = refined.var({2, 3}, false, true);
  auto shape = std::vector<int64_t>{1, c, 1, 1};
  auto phi = (gb_lambda.reshape(shape) * (refined - mu) / torch::sqrt(var + norm_eps) +
              gb_beta.reshape(shape)) *
                 gb_p.reshape(shape) +
             refined * gb_px.reshape(shape);
  auto r = gb_reduce(phi);
  auto y = (gb_dw5(r) + gb_dw7(r) + gb_dw9(r)) / 3.0;
  return gb_proj(gb_expand(y) + refined);
}

}  // namespace vuga
