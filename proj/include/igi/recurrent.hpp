#pragma once

#include "igi/config.hpp"
#include "igi/encoders.hpp"
#include "igi/types.hpp"

namespace igi {

// Convolution parameters of one ConvGRU block. Both convolutions read the channel concatenation
// (f_t, h): the gate conv emits 2C channels split into (z, r), the candidate conv emits C channels.
struct GRUWeights {
  torch::Tensor gate_weight;  // 2C x (Cf + C) x k x k
  torch::Tensor gate_bias;    // 2C
  torch::Tensor cand_weight;  // C x (Cf + C) x k x k
  torch::Tensor cand_bias;    // C
};

// z, r = sigmoid(Conv(f, h)); o = tanh(Conv(f, r * h)); h' = z * h + (1 - z) * o.
torch::Tensor conv_gru_step(const torch::Tensor& f, const torch::Tensor& h_prev, const GRUWeights& weights);

// Left fold of conv_gru_step over the sequence; an empty sequence returns h0.
torch::Tensor fold_sequence(const std::vector<torch::Tensor>& features, const torch::Tensor& h0,
                            const GRUWeights& weights);

class ConvGRUCellImpl : public torch::nn::Module {
 public:
  ConvGRUCellImpl(int feature_channels, int state_channels, int kernel);
  torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& h_prev);
  GRUWeights weights() const { return {gate_weight, gate_bias, cand_weight, cand_bias}; }
  int feature_channels() const { return feature_channels_; }
  int state_channels() const { return state_channels_; }

  torch::Tensor gate_weight, gate_bias, cand_weight, cand_bias;

 private:
  int feature_channels_;
  int state_channels_;
};
TORCH_MODULE(ConvGRUCell);

// Per-scale hidden maps of both recurrent encoders plus the number of frames consumed.
struct RecurrentState {
  std::vector<torch::Tensor> tex;
  std::vector<torch::Tensor> tri;
  int64_t t = 0;
};

// One ConvGRU per decoder scale of a frozen one-shot encoder; its heads read the hidden maps.
class RecurrentDecoderImpl : public torch::nn::Module {
 public:
  RecurrentDecoderImpl(const std::vector<int>& scale_channels, const std::vector<int>& scale_resolutions,
                       int head_hidden, const std::vector<int>& head_out, int kernel);

  std::vector<torch::Tensor> zero_state(int64_t batch, torch::TensorOptions options) const;
  // Advance every scale by one frame. pre: frame-wise decoder activations, coarse to fine.
  std::vector<torch::Tensor> step(const std::vector<torch::Tensor>& pre, const std::vector<torch::Tensor>& state);
  std::vector<torch::Tensor> fold(const std::vector<std::vector<torch::Tensor>>& frames,
                                  std::vector<torch::Tensor> state);
  std::vector<torch::Tensor> decode(const std::vector<torch::Tensor>& state) { return heads->forward(state); }

  // Initialize so that one step from a zero state reproduces the one-shot decoder: the candidate
  // conv copies conv_b on the feature channels, the update gate is biased shut and the heads are copied.
  void distill_from(UNetImpl& backbone, HeadsImpl& one_shot_heads, double update_gate_bias);

  std::vector<ConvGRUCell> cells;
  Heads heads{nullptr};

 private:
  std::vector<int> channels_;
  std::vector<int> resolutions_;
};
TORCH_MODULE(RecurrentDecoder);

// Fold the frame features `cycles` times from a zero state without recording gradients.
std::vector<torch::Tensor> warm_start(RecurrentDecoderImpl& decoder,
                                      const std::vector<std::vector<torch::Tensor>>& frames, int cycles,
                                      int64_t batch, torch::TensorOptions options);

// Fixed-window fusion baseline: each GRU block is replaced by one conv over the concatenated
// activations of W frames. Shorter inputs are padded by cycling, longer ones are split into
// windows whose head outputs are averaged.
class ConvFusionImpl : public torch::nn::Module {
 public:
  ConvFusionImpl(const std::vector<int>& scale_channels, int head_hidden, const std::vector<int>& head_out,
                 int window, int kernel);
  std::vector<torch::Tensor> fuse_window(const std::vector<std::vector<torch::Tensor>>& frames);
  std::vector<torch::Tensor> forward(const std::vector<std::vector<torch::Tensor>>& frames);
  // Start as the mean of conv_b over the window with the one-shot heads.
  void distill_from(UNetImpl& backbone, HeadsImpl& one_shot_heads);
  int window() const { return window_; }

  std::vector<torch::nn::Conv2d> convs;
  Heads heads{nullptr};

 private:
  int window_;
};
TORCH_MODULE(ConvFusion);

}  // namespace igi
