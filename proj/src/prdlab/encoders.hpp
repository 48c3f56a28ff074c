#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prdlab/rng.hpp"
#include "prdlab/tensor.hpp"
#include "prdlab/text.hpp"

namespace prdlab {

struct EncoderConfig {
  std::size_t embed_dim = 32;     // shared joint-space width
  std::size_t regions = 16;       // image sub-regions, a square grid
  std::size_t subword_dim = 32;   // width of word-piece features
  std::size_t image_side = 32;
  std::size_t image_channels = 1;
  std::vector<std::size_t> conv_channels{16, 32, 32};
  std::size_t conv_kernel = 2;    // stride-2 convolutions, edge-replicated padding
  int local_layer = -1;           // conv layer feeding the sub-region features; -1 = last
  std::size_t ffn_dim = 64;
  bool position_signal = true;
  std::uint64_t init_seed = 1;

  void validate() const;
  std::size_t grid() const;
  std::size_t local_layer_index() const;
};

// Half-open range of word-piece columns belonging to one word.
struct WordSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<WordSpan> word_spans(const TokenizedReport& report);

struct ImageEmbedding {
  Tensor global;  // (d_e)
  Tensor local;   // (d_e, M)
};

struct TextEmbedding {
  Tensor global;   // (d_e)
  Tensor subword;  // (K, N)
  Tensor local;    // (d_e, W); undefined when not requested
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Per-word mean of word-piece columns followed by a shared (d_e x K)
// projection. The spans must partition [0, N) in any order.
Tensor aggregate_subwords(const Tensor& subword_features, std::span<const WordSpan> spans,
                          const Tensor& projection);

// Small trainable image and text encoders with the joint-space interface:
// global embeddings, per-region image features and per-word text features.
class Model {
 public:
  explicit Model(EncoderConfig config);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy with independent parameter storage.
  Model clone() const;

  // pixels: (side, side, channels), values in [0, 1].
  ImageEmbedding encode_image(const Tensor& pixels) const;
  TextEmbedding encode_text(const TokenizedReport& report, bool with_local = true) const;

  const EncoderConfig& config() const { return config_; }
  const WordPieceVocab& vocab() const;
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const Tensor& parameter(std::string_view name) const;
  void zero_grad();

 private:
  struct Geometry;

  Tensor& add_param(std::string name, Shape shape, double stddev, Rng& rng);

  EncoderConfig config_;
  std::vector<NamedTensor> params_;
  std::unique_ptr<Geometry> geometry_;
};

}  // namespace prdlab
