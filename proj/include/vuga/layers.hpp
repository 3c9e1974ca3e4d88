#pragma once

#include <torch/torch.h>

#include "vuga/common.hpp"

namespace vuga {

// LayerNorm over the channel dimension at each spatial location of an NCHW
// tensor, with per-channel affine parameters.
struct ChannelLayerNormImpl : torch::nn::Module {
  explicit ChannelLayerNormImpl(int64_t channels, double eps = 1e-5);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;
  int64_t channels_;
  double eps_;
};
TORCH_MODULE(ChannelLayerNorm);

struct DeformConv2dOptions {
  DeformConv2dOptions(int64_t in_channels, int64_t out_channels)
      : in_channels(in_channels), out_channels(out_channels) {}
  int64_t in_channels;
  int64_t out_channels;
  int64_t kernel = 3;
  bool modulated = true;
  bool bias = true;
};

// Modulated deformable convolution (stride 1, padding kernel/2). The offset
// predictor is a standard conv initialized to zero, so the layer starts out
// exactly equal to a plain convolution with the same kernel weights:
// offsets are zero and the modulation term 2*sigmoid(0) is one.
struct DeformConv2dImpl : torch::nn::Module {
  explicit DeformConv2dImpl(DeformConv2dOptions options);
  torch::Tensor forward(const torch::Tensor& x);

  DeformConv2dOptions options;
  torch::nn::Conv2d offset_conv{nullptr};
  torch::Tensor weight;
  torch::Tensor bias;
};
TORCH_MODULE(DeformConv2d);

// Bilinear x2 upsampling. Preserves constant maps and is linear in its input.
torch::Tensor upsample2x(const torch::Tensor& x);

// Zero all conv/linear biases under a module. Weight init stays at the torch
// default (kaiming uniform).
void zero_bias_init(torch::nn::Module& module);

// FNV-1a over the raw bytes of every parameter, in registration order.
uint64_t parameter_checksum(const torch::nn::Module& module);

}  // namespace vuga
