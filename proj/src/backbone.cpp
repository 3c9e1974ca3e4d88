#include "vuga/backbone.hpp"

#include <filesystem>

namespace vuga {

void BackboneSpec::validate() const {
  VUGA_CHECK(stage_strides == std::array<int64_t, 4>({4, 8, 16, 32}), config_error,
             "backbone strides are fixed at (4,8,16,32)");
  for (int i = 0; i < 4; ++i) {
    VUGA_CHECK(stage_channels[i] > 0, config_error, "stage channel counts must be positive");
    VUGA_CHECK(stage_depths[i] > 0, config_error, "stage depths must be positive");
  }
  VUGA_CHECK(!pretrained_source.empty(), config_error, "pretrained_source must be set");
}

BackboneSpec backbone_spec(const std::string& id) {
  BackboneSpec spec;
  if (id == "tiny") {
    spec.name = "tiny";
    spec.stage_channels = {96, 192, 384, 768};
    spec.stage_depths = {2, 2, 6, 2};
  } else if (id == "micro") {
    spec.name = "micro";
    spec.stage_channels = {16, 32, 64, 128};
    spec.stage_depths = {1, 1, 2, 1};
  } else if (id == "nano") {
    spec.name = "nano";
    spec.stage_channels = {4, 8, 16, 32};
    spec.stage_depths = {1, 1, 1, 1};
  } else {
    throw config_error(detail::msg("unknown backbone id '", id,
                                   "' (known: tiny, micro, nano)"));
  }
  return spec;
}

std::array<int64_t, 4> FeaturePyramid::channels() const {
  std::array<int64_t, 4> out{};
  for (int i = 0; i < 4; ++i) out[i] = stages[i].size(1);
  return out;
}

void FeaturePyramid::validate(const BackboneSpec& spec) const {
  for (int i = 0; i < 4; ++i) {
    VUGA_CHECK(stages[i].defined() && stages[i].dim() == 4, shape_error, "stage ", i + 1,
               " must be a (B,C,H,W) tensor");
    VUGA_CHECK(stages[i].size(1) == spec.stage_channels[i], shape_error, "stage ", i + 1,
               " expected ", spec.stage_channels[i], " channels, got ", stages[i].size(1));
  }
  for (int i = 1; i < 4; ++i) {
    VUGA_CHECK(stages[i].size(2) * 2 == stages[i - 1].size(2) &&
                   stages[i].size(3) * 2 == stages[i - 1].size(3),
               shape_error, "spatial dims must halve stage-to-stage");
  }
}

StageBlockImpl::StageBlockImpl(int64_t channels) {
  dwconv = register_module(
      "dwconv", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(channels, channels, 7).padding(3).groups(channels)));
  norm = register_module("norm", ChannelLayerNorm(channels));
  pw1 = register_module("pw1",
                        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 4 * channels, 1)));
  pw2 = register_module("pw2",
                        torch::nn::Conv2d(torch::nn::Conv2dOptions(4 * channels, channels, 1)));
}

torch::Tensor StageBlockImpl::forward(const torch::Tensor& x) {
  auto y = norm(dwconv(x));
  y = pw2(torch::gelu(pw1(y)));
  return x + y;
}

HierarchicalBackboneImpl::HierarchicalBackboneImpl(const BackboneSpec& s) : spec(s) {
  spec.validate();
  patch_embed = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, spec.stage_channels[0], 4).stride(4)));
  embed_norm = register_module("embed_norm", ChannelLayerNorm(spec.stage_channels[0]));
  stages = register_module("stages", torch::nn::ModuleList());
  downsamples = register_module("downsamples", torch::nn::ModuleList());
  for (int i = 0; i < 4; ++i) {
    auto seq = torch::nn::Sequential();
    for (int64_t d = 0; d < spec.stage_depths[i]; ++d)
      seq->push_back(StageBlock(spec.stage_channels[i]));
    stages->push_back(seq);
    if (i < 3) {
      auto down = torch::nn::Sequential(
          ChannelLayerNorm(spec.stage_channels[i]),
          torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.stage_channels[i],
                                                     spec.stage_channels[i + 1], 2)
                                .stride(2)));
      downsamples->push_back(down);
    }
  }
}

std::array<torch::Tensor, 4> HierarchicalBackboneImpl::forward_stages(const torch::Tensor& x) {
  std::array<torch::Tensor, 4> out;
  auto h = embed_norm(patch_embed(x));
  for (int i = 0; i < 4; ++i) {
    h = stages[i]->as<torch::nn::Sequential>()->forward(h);
    out[i] = h;
    if (i < 3) h = downsamples[i]->as<torch::nn::Sequential>()->forward(h);
  }
  return out;
}

BackboneAdapter::BackboneAdapter(BackboneSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  load_weights();
  if (spec_.frozen) {
    for (auto& p : net_->parameters()) p.set_requires_grad(false);
  }
  net_->eval();
}

void BackboneAdapter::load_weights() {
  if (spec_.pretrained_source.rfind("seed:", 0) == 0) {
    uint64_t seed = 0;
    try {
      seed = std::stoull(spec_.pretrained_source.substr(5));
    } catch (const std::exception&) {
      throw config_error(detail::msg("bad pretrained_source '", spec_.pretrained_source,
                                     "', expected seed:<n> or a file path"));
    }
    // Deterministic init: the same source string always produces the same
    // parameters, which stands in for a fixed pretrained artifact.
    torch::manual_seed(seed);
    net_ = HierarchicalBackbone(spec_);
    return;
  }
  VUGA_CHECK(std::filesystem::exists(spec_.pretrained_source), io_error,
             "backbone weights not found: ", spec_.pretrained_source);
  net_ = HierarchicalBackbone(spec_);
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(spec_.pretrained_source);
    net_->load(archive);
  } catch (const c10::Error& e) {
    throw io_error(detail::msg("cannot load backbone weights from '", spec_.pretrained_source,
                               "': ", e.what_without_backtrace()));
  }
  // Loading into a freshly built net of the declared shape verifies the
  // stage channel counts against the stored weights.
}

FeaturePyramid BackboneAdapter::extract_pyramid(const torch::Tensor& input) const {
  auto x = input.dim() == 3 ? input.unsqueeze(0) : input;
  VUGA_CHECK(x.dim() == 4 && x.size(1) == 3, shape_error,
             "backbone expects (B,3,R,R) input, got ", input.sizes());
  VUGA_CHECK(x.size(2) == x.size(3), shape_error, "backbone expects square input, got ",
             input.sizes());
  VUGA_CHECK(x.size(2) % 32 == 0, shape_error, "input resolution must be divisible by 32, got ",
             x.size(2));

  // The backbone is frozen, so features are never part of the autograd graph.
  torch::NoGradGuard no_grad;
  FeaturePyramid pyramid;
  auto& net = const_cast<BackboneAdapter*>(this)->net_;
  pyramid.stages = net->forward_stages(x);
  pyramid.validate(spec_);
  return pyramid;
}

void save_backbone_weights(const BackboneAdapter& adapter, const std::string& path) {
  torch::serialize::OutputArchive archive;
  const_cast<HierarchicalBackbone&>(adapter.net())->save(archive);
  archive.save_to(path);
}

}  // namespace vuga
