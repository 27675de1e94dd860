#include "igi/recurrent.hpp"

#include "igi/common.hpp"

namespace igi {

namespace F = torch::nn::functional;

namespace {

// Conv over cat(f, h) evaluated as two convs on the weight split, so that a zero h-part leaves
// the f-part result bit-identical to a conv over f alone.
torch::Tensor split_conv(const torch::Tensor& f, const torch::Tensor& h, const torch::Tensor& weight,
                         const torch::Tensor& bias) {
  const int64_t cf = f.size(1);
  const int64_t pad = weight.size(-1) / 2;
  const auto opts = F::Conv2dFuncOptions().padding(pad);
  const torch::Tensor wf = weight.narrow(1, 0, cf).contiguous();
  const torch::Tensor wh = weight.narrow(1, cf, weight.size(1) - cf).contiguous();
  return F::conv2d(f, wf, F::Conv2dFuncOptions().padding(pad).bias(bias)) + F::conv2d(h, wh, opts);
}

}  // namespace

torch::Tensor conv_gru_step(const torch::Tensor& f, const torch::Tensor& h_prev, const GRUWeights& weights) {
  require(f.dim() == 4 && h_prev.dim() == 4, "ConvGRU inputs must be B x C x H x W");
  require(f.size(0) == h_prev.size(0) && f.size(2) == h_prev.size(2) && f.size(3) == h_prev.size(3),
          "ConvGRU feature and state shapes differ");
  const int64_t c = h_prev.size(1);
  require(weights.gate_weight.size(0) == 2 * c && weights.cand_weight.size(0) == c,
          "ConvGRU weights do not match the state channels");
  require(weights.gate_weight.size(1) == f.size(1) + c, "ConvGRU weights do not match the feature channels");
  const torch::Tensor gates = torch::sigmoid(split_conv(f, h_prev, weights.gate_weight, weights.gate_bias));
  const torch::Tensor z = gates.narrow(1, 0, c);
  const torch::Tensor r = gates.narrow(1, c, c);
  const torch::Tensor o = torch::tanh(split_conv(f, r * h_prev, weights.cand_weight, weights.cand_bias));
  return z * h_prev + (1.0 - z) * o;
}

torch::Tensor fold_sequence(const std::vector<torch::Tensor>& features, const torch::Tensor& h0,
                            const GRUWeights& weights) {
  torch::Tensor h = h0;
  for (const auto& f : features) h = conv_gru_step(f, h, weights);
  return h;
}

ConvGRUCellImpl::ConvGRUCellImpl(int feature_channels, int state_channels, int kernel)
    : feature_channels_(feature_channels), state_channels_(state_channels) {
  require(kernel % 2 == 1, "ConvGRU kernel must be odd");
  const int in = feature_channels + state_channels;
  const double scale = 1.0 / std::sqrt(double(in * kernel * kernel));
  gate_weight = register_parameter("gate_weight", torch::randn({2 * state_channels, in, kernel, kernel}) * scale);
  gate_bias = register_parameter("gate_bias", torch::zeros({2 * state_channels}));
  cand_weight = register_parameter("cand_weight", torch::randn({state_channels, in, kernel, kernel}) * scale);
  cand_bias = register_parameter("cand_bias", torch::zeros({state_channels}));
}

torch::Tensor ConvGRUCellImpl::forward(const torch::Tensor& f, const torch::Tensor& h_prev) {
  return conv_gru_step(f, h_prev, weights());
}

RecurrentDecoderImpl::RecurrentDecoderImpl(const std::vector<int>& scale_channels,
                                           const std::vector<int>& scale_resolutions, int head_hidden,
                                           const std::vector<int>& head_out, int kernel)
    : channels_(scale_channels), resolutions_(scale_resolutions) {
  require(scale_channels.size() == scale_resolutions.size(), "one resolution per recurrent scale");
  for (std::size_t s = 0; s < scale_channels.size(); ++s)
    cells.push_back(register_module("gru" + std::to_string(s),
                                    ConvGRUCell(scale_channels[s], scale_channels[s], kernel)));
  heads = register_module("heads", Heads(scale_channels, head_hidden, head_out));
}

std::vector<torch::Tensor> RecurrentDecoderImpl::zero_state(int64_t batch, torch::TensorOptions options) const {
  std::vector<torch::Tensor> h;
  for (std::size_t s = 0; s < channels_.size(); ++s)
    h.push_back(torch::zeros({batch, channels_[s], resolutions_[s], resolutions_[s]}, options));
  return h;
}

std::vector<torch::Tensor> RecurrentDecoderImpl::step(const std::vector<torch::Tensor>& pre,
                                                      const std::vector<torch::Tensor>& state) {
  require(pre.size() == cells.size() && state.size() == cells.size(), "recurrent scale count mismatch");
  std::vector<torch::Tensor> next;
  for (std::size_t s = 0; s < cells.size(); ++s) next.push_back(cells[s]->forward(pre[s], state[s]));
  return next;
}

std::vector<torch::Tensor> RecurrentDecoderImpl::fold(const std::vector<std::vector<torch::Tensor>>& frames,
                                                      std::vector<torch::Tensor> state) {
  for (const auto& pre : frames) state = step(pre, state);
  return state;
}

void RecurrentDecoderImpl::distill_from(UNetImpl& backbone, HeadsImpl& one_shot_heads, double update_gate_bias) {
  torch::NoGradGuard no_grad;
  for (std::size_t s = 0; s < cells.size(); ++s) {
    auto& cell = *cells[s];
    const torch::nn::Conv2d& conv = backbone.conv_b(s);
    require(conv->weight.size(0) == cell.state_channels() && conv->weight.size(1) == cell.feature_channels() &&
                conv->weight.size(2) == cell.cand_weight.size(2),
            "distillation source does not match the recurrent cell");
    const int64_t cf = cell.feature_channels();
    const int64_t c = cell.state_channels();
    cell.cand_weight.zero_();
    cell.cand_weight.narrow(1, 0, cf).copy_(conv->weight);
    cell.cand_bias.copy_(conv->bias);
    cell.gate_weight.zero_();
    cell.gate_bias.zero_();
    cell.gate_bias.narrow(0, 0, c).fill_(update_gate_bias);
  }
  copy_weights(one_shot_heads, *heads);
}

std::vector<torch::Tensor> warm_start(RecurrentDecoderImpl& decoder,
                                      const std::vector<std::vector<torch::Tensor>>& frames, int cycles,
                                      int64_t batch, torch::TensorOptions options) {
  require(cycles >= 0, "warm start cycles must be non-negative");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> state = decoder.zero_state(batch, options);
  for (int c = 0; c < cycles; ++c) state = decoder.fold(frames, state);
  return state;
}

ConvFusionImpl::ConvFusionImpl(const std::vector<int>& scale_channels, int head_hidden,
                               const std::vector<int>& head_out, int window, int kernel)
    : window_(window) {
  require(window >= 1, "fusion window must be positive");
  for (std::size_t s = 0; s < scale_channels.size(); ++s) {
    const int c = scale_channels[s];
    convs.push_back(register_module(
        "fuse" + std::to_string(s),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(window * c, c, kernel).padding(kernel / 2))));
  }
  heads = register_module("heads", Heads(scale_channels, head_hidden, head_out));
}

std::vector<torch::Tensor> ConvFusionImpl::fuse_window(const std::vector<std::vector<torch::Tensor>>& frames) {
  require(!frames.empty(), "fusion needs at least one frame");
  require(static_cast<int>(frames.size()) <= window_, "fusion window overflow");
  std::vector<torch::Tensor> fused;
  for (std::size_t s = 0; s < convs.size(); ++s) {
    std::vector<torch::Tensor> slots;
    for (int i = 0; i < window_; ++i) slots.push_back(frames[i % frames.size()][s]);
    fused.push_back(torch::tanh(convs[s]->forward(torch::cat(slots, 1))));
  }
  return heads->forward(fused);
}

std::vector<torch::Tensor> ConvFusionImpl::forward(const std::vector<std::vector<torch::Tensor>>& frames) {
  require(!frames.empty(), "fusion needs at least one frame");
  if (static_cast<int>(frames.size()) <= window_) return fuse_window(frames);
  std::vector<torch::Tensor> sum;
  int chunks = 0;
  for (std::size_t begin = 0; begin < frames.size(); begin += window_) {
    const std::size_t end = std::min(frames.size(), begin + static_cast<std::size_t>(window_));
    const std::vector<std::vector<torch::Tensor>> chunk(frames.begin() + begin, frames.begin() + end);
    std::vector<torch::Tensor> out = fuse_window(chunk);
    if (sum.empty()) {
      sum = out;
    } else {
      for (std::size_t s = 0; s < out.size(); ++s)
        if (out[s].defined()) sum[s] = sum[s] + out[s];
    }
    ++chunks;
  }
  for (auto& t : sum)
    if (t.defined()) t = t / double(chunks);
  return sum;
}

void ConvFusionImpl::distill_from(UNetImpl& backbone, HeadsImpl& one_shot_heads) {
  torch::NoGradGuard no_grad;
  for (std::size_t s = 0; s < convs.size(); ++s) {
    const torch::nn::Conv2d& src = backbone.conv_b(s);
    require(src->weight.size(1) * window_ == convs[s]->weight.size(1), "fusion conv does not match conv_b");
    convs[s]->weight.copy_(src->weight.repeat({1, window_, 1, 1}) / double(window_));
    convs[s]->bias.copy_(src->bias);
  }
  copy_weights(one_shot_heads, *heads);
}

}  // namespace igi
