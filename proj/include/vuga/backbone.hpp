#pragma once

#include <array>
#include <memory>
#include <string>

#include <torch/torch.h>

#include "vuga/layers.hpp"

namespace vuga {

struct BackboneSpec {
  std::string name = "tiny";
  std::array<int64_t, 4> stage_channels{96, 192, 384, 768};
  std::array<int64_t, 4> stage_strides{4, 8, 16, 32};
  std::array<int64_t, 4> stage_depths{2, 2, 6, 2};
  bool frozen = true;
  // "seed:<n>" for a deterministic seeded initialization, or a path to a
  // weight archive produced by save_backbone_weights.
  std::string pretrained_source = "seed:1";

  void validate() const;
};

// Named specs. "tiny" is the reference configuration (96/192/384/768);
// "micro" is a reduced layout used by fast tests and examples.
BackboneSpec backbone_spec(const std::string& id);

struct FeaturePyramid {
  std::array<torch::Tensor, 4> stages;

  std::array<int64_t, 4> channels() const;
  void validate(const BackboneSpec& spec) const;
};

// One hierarchical stage block: depthwise conv + channel layer norm + MLP,
// with a residual connection.
struct StageBlockImpl : torch::nn::Module {
  explicit StageBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d dwconv{nullptr};
  ChannelLayerNorm norm{nullptr};
  torch::nn::Conv2d pw1{nullptr};
  torch::nn::Conv2d pw2{nullptr};
};
TORCH_MODULE(StageBlock);

// Four-stage hierarchical feature extractor with strides (4, 8, 16, 32).
struct HierarchicalBackboneImpl : torch::nn::Module {
  explicit HierarchicalBackboneImpl(const BackboneSpec& spec);
  std::array<torch::Tensor, 4> forward_stages(const torch::Tensor& x);

  BackboneSpec spec;
  torch::nn::Conv2d patch_embed{nullptr};
  ChannelLayerNorm embed_norm{nullptr};
  torch::nn::ModuleList stages;
  torch::nn::ModuleList downsamples;
};
TORCH_MODULE(HierarchicalBackbone);

// Wraps the backbone with frozen parameters and exposes the stage-wise
// feature pyramid. The adapter always runs the network in evaluation mode
// and never tracks gradients through it.
class BackboneAdapter {
 public:
  explicit BackboneAdapter(BackboneSpec spec);

  // x: (3,R,R) or (B,3,R,R), R divisible by 32. Returns maps with shapes
  // (B, C_i, R/stride_i, R/stride_i).
  FeaturePyramid extract_pyramid(const torch::Tensor& x) const;

  uint64_t checksum() const { return parameter_checksum(*net_); }
  const BackboneSpec& spec() const { return spec_; }
  HierarchicalBackbone& net() { return net_; }
  const HierarchicalBackbone& net() const { return net_; }

 private:
  void load_weights();

  BackboneSpec spec_;
  HierarchicalBackbone net_{nullptr};
};

void save_backbone_weights(const BackboneAdapter& adapter, const std::string& path);

}  // namespace vuga
