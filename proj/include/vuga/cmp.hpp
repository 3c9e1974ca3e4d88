#pragma once

#include <array>

#include <torch/torch.h>

#include "vuga/layers.hpp"

namespace vuga {

struct CmpStageConfig {
  explicit CmpStageConfig(int64_t in_channels) : in_channels(in_channels) {}
  int64_t in_channels;
  int64_t fusion_channels = 512;
  int64_t local_dilation = 2;
  int64_t global_reduction = 4;
  std::array<int64_t, 3> multiscale_kernels{5, 7, 9};
  int64_t dcn_kernel = 3;
  bool modulated_dcn = true;

  void validate() const;
};

// Cross-scale multi-receptive-field perception for one pyramid stage:
// deformable refinement, then a local channel-attention branch and a global
// normalization + multiscale branch, summed into a fusion-width map.
struct CmpStageImpl : torch::nn::Module {
  explicit CmpStageImpl(CmpStageConfig config);

  // Intermediate results exposed for inspection; forward() routes through
  // the same computation.
  struct Trace {
    torch::Tensor refined;      // D_i after DCN + norm + GELU
    torch::Tensor attention;    // (B, C, C) row-stochastic channel attention
    torch::Tensor branch5, branch7, branch9;
    torch::Tensor multiscale;   // mean of the three branches
    torch::Tensor local_out;    // (B, fusion, H, W)
    torch::Tensor global_out;   // (B, fusion, H, W)
    torch::Tensor output;       // local_out + global_out
  };

  torch::Tensor forward(const torch::Tensor& f);
  Trace forward_trace(const torch::Tensor& f);

  torch::Tensor refine(const torch::Tensor& f);
  torch::Tensor local_branch(const torch::Tensor& refined, Trace* trace = nullptr);
  torch::Tensor global_branch(const torch::Tensor& refined, Trace* trace = nullptr);

  CmpStageConfig config;
  double norm_eps = 1e-5;

  DeformConv2d dcn{nullptr};
  ChannelLayerNorm dcn_norm{nullptr};

  torch::nn::Conv2d local_qkv{nullptr};   // 1x1, C -> 3C
  torch::nn::Conv2d local_dw{nullptr};    // 3x3 depthwise, dilation 2
  torch::nn::Conv2d local_proj{nullptr};  // 1x1, C -> fusion

  torch::Tensor gb_lambda, gb_beta, gb_p, gb_px;  // per-channel blend weights
  torch::nn::Conv2d gb_reduce{nullptr};   // 1x1, C -> C/reduction
  torch::nn::Conv2d gb_dw5{nullptr}, gb_dw7{nullptr}, gb_dw9{nullptr};
  torch::nn::Conv2d gb_expand{nullptr};   // 1x1, C/reduction -> C
  torch::nn::Conv2d gb_proj{nullptr};     // 1x1, C -> fusion
};
TORCH_MODULE(CmpStage);

}  // namespace vuga
