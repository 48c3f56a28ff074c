#include "prdlab/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "prdlab/error.hpp"

namespace prdlab {

namespace {

constexpr std::size_t kPositionTableRows = 512;

std::size_t isqrt_exact(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

std::size_t conv_out(std::size_t in, std::size_t kernel) {
  const std::size_t pad = (kernel - 1) / 2;
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / 2 + 1;
}

double sinusoid(std::size_t pos, std::size_t j, std::size_t width) {
  const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(width));
  const double angle = static_cast<double>(pos) * rate;
  return j % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

// Adaptive average pooling of an (h x w) map onto a (g x g) grid, as a
// (g*g) x (h*w) matrix.
Tensor pooling_matrix(std::size_t h, std::size_t w, std::size_t g) {
  std::vector<double> m(g * g * h * w, 0.0);
  for (std::size_t gy = 0; gy < g; ++gy) {
    const std::size_t y0 = gy * h / g;
    const std::size_t y1 = ((gy + 1) * h + g - 1) / g;
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t x0 = gx * w / g;
      const std::size_t x1 = ((gx + 1) * w + g - 1) / g;
      const double weight = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      const std::size_t row = gy * g + gx;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) m[row * h * w + y * w + x] = weight;
    }
  }
  return Tensor::from({g * g, h * w}, std::move(m));
}

}  // namespace

void EncoderConfig::validate() const {
  if (embed_dim == 0 || subword_dim == 0 || image_side == 0 || image_channels == 0 || ffn_dim == 0) {
    throw InvalidArgument("encoder dimensions must be positive");
  }
  if (conv_channels.empty()) throw InvalidArgument("encoder needs at least one conv layer");
  if (std::find(conv_channels.begin(), conv_channels.end(), 0u) != conv_channels.end()) {
    throw InvalidArgument("conv channel counts must be positive");
  }
  if (conv_kernel == 0) throw InvalidArgument("conv kernel must be positive");
  if (regions == 0 || isqrt_exact(regions) == 0) {
    throw InvalidArgument("regions must be a positive perfect square, got " + std::to_string(regions));
  }
  if (local_layer < -1 || local_layer >= static_cast<int>(conv_channels.size())) {
    throw InvalidArgument("local_layer out of range");
  }
  std::size_t side = image_side;
  for (std::size_t l = 0; l < conv_channels.size(); ++l) {
    side = conv_out(side, conv_kernel);
    if (side == 0) throw InvalidArgument("image side too small for the conv stack");
    if (l == local_layer_index() && side < grid()) {
      throw InvalidArgument("feature map at the local layer is smaller than the region grid");
    }
  }
}

std::size_t EncoderConfig::grid() const { return isqrt_exact(regions); }

std::size_t EncoderConfig::local_layer_index() const {
  return local_layer < 0 ? conv_channels.size() - 1 : static_cast<std::size_t>(local_layer);
}

std::vector<WordSpan> word_spans(const TokenizedReport& report) {
  std::vector<WordSpan> spans;
  spans.reserve(report.subwords.size());
  std::size_t at = 0;
  for (const auto& pieces : report.subwords) {
    spans.push_back({at, at + pieces.size()});
    at += pieces.size();
  }
  return spans;
}

Tensor aggregate_subwords(const Tensor& subword_features, std::span<const WordSpan> spans,
                          const Tensor& projection) {
  if (subword_features.rank() != 2) throw InvalidArgument("aggregate_subwords: expected (K, N) features");
  const std::size_t n = subword_features.dim(1);
  const std::size_t w = spans.size();
  if (w == 0) throw InvalidArgument("aggregate_subwords: no words");

  std::vector<WordSpan> sorted(spans.begin(), spans.end());
  std::sort(sorted.begin(), sorted.end(), [](const WordSpan& a, const WordSpan& b) { return a.begin < b.begin; });
  std::size_t expect = 0;
  for (const auto& s : sorted) {
    if (s.begin != expect || s.end <= s.begin) {
      throw InvalidArgument("aggregate_subwords: word spans do not partition the sub-words");
    }
    expect = s.end;
  }
  if (expect != n) throw InvalidArgument("aggregate_subwords: word spans do not partition the sub-words");

  std::vector<double> avg(n * w, 0.0);
  for (std::size_t j = 0; j < w; ++j) {
    const double weight = 1.0 / static_cast<double>(spans[j].end - spans[j].begin);
    for (std::size_t i = spans[j].begin; i < spans[j].end; ++i) avg[i * w + j] = weight;
  }
  const Tensor means = matmul(subword_features, Tensor::from({n, w}, std::move(avg)));
  return matmul(projection, means);
}

struct Model::Geometry {
  struct Conv {
    std::size_t in_h, in_w, in_c, out_h, out_w, out_c;
    std::shared_ptr<const std::vector<std::int64_t>> im2col;
  };
  std::vector<Conv> convs;
  Tensor pool;       // (M, h*w) at the local layer
  Tensor mean_row;   // (1, h*w) at the last layer
  std::vector<double> positions;  // kPositionTableRows x K
};

Model::Model(EncoderConfig config) : config_(std::move(config)), geometry_(std::make_unique<Geometry>()) {
  config_.validate();
  Rng rng(config_.init_seed);
  const std::size_t k = config_.conv_kernel;
  const std::size_t pad = (k - 1) / 2;

  std::size_t h = config_.image_side;
  std::size_t w = config_.image_side;
  std::size_t c = config_.image_channels;
  for (std::size_t l = 0; l < config_.conv_channels.size(); ++l) {
    Geometry::Conv conv{h, w, c, conv_out(h, k), conv_out(w, k), config_.conv_channels[l], nullptr};
    auto index = std::make_shared<std::vector<std::int64_t>>();
    index->reserve(conv.out_h * conv.out_w * k * k * c);
    for (std::size_t oy = 0; oy < conv.out_h; ++oy) {
      for (std::size_t ox = 0; ox < conv.out_w; ++ox) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = std::clamp<std::int64_t>(static_cast<std::int64_t>(oy * 2 + ky) - static_cast<std::int64_t>(pad), 0,
                                                   static_cast<std::int64_t>(h) - 1);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = std::clamp<std::int64_t>(static_cast<std::int64_t>(ox * 2 + kx) - static_cast<std::int64_t>(pad), 0,
                                                     static_cast<std::int64_t>(w) - 1);
            for (std::size_t ch = 0; ch < c; ++ch) {
              index->push_back((iy * static_cast<std::int64_t>(w) + ix) * static_cast<std::int64_t>(c) +
                               static_cast<std::int64_t>(ch));
            }
          }
        }
      }
    }
    conv.im2col = std::move(index);
    const std::size_t fan_in = k * k * c;
    add_param("image.conv" + std::to_string(l) + ".weight", {fan_in, conv.out_c},
              std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
    add_param("image.conv" + std::to_string(l) + ".bias", {conv.out_c}, 0.0, rng);
    geometry_->convs.push_back(conv);
    h = conv.out_h;
    w = conv.out_w;
    c = conv.out_c;
  }
  const auto& local = geometry_->convs[config_.local_layer_index()];
  const auto& last = geometry_->convs.back();
  geometry_->pool = pooling_matrix(local.out_h, local.out_w, config_.grid());
  geometry_->mean_row = Tensor::full({1, last.out_h * last.out_w}, 1.0 / static_cast<double>(last.out_h * last.out_w));
  const std::size_t d = config_.embed_dim;
  add_param("image.local_proj", {d, local.out_c}, 1.0 / std::sqrt(static_cast<double>(local.out_c)), rng);
  add_param("image.global_proj", {d, last.out_c}, 1.0 / std::sqrt(static_cast<double>(last.out_c)), rng);

  const std::size_t kw = config_.subword_dim;
  const std::size_t hid = config_.ffn_dim;
  const double attn_std = 1.0 / std::sqrt(static_cast<double>(kw));
  add_param("text.embedding", {vocab().size(), kw}, 1.0, rng);
  add_param("text.attn.query", {kw, kw}, attn_std, rng);
  add_param("text.attn.key", {kw, kw}, attn_std, rng);
  add_param("text.attn.value", {kw, kw}, attn_std, rng);
  add_param("text.attn.output", {kw, kw}, attn_std, rng);
  add_param("text.ffn.w1", {kw, hid}, std::sqrt(2.0 / static_cast<double>(kw)), rng);
  add_param("text.ffn.b1", {hid}, 0.0, rng);
  add_param("text.ffn.w2", {hid, kw}, 1.0 / std::sqrt(static_cast<double>(hid)), rng);
  add_param("text.ffn.b2", {kw}, 0.0, rng);
  add_param("text.global_proj", {d, kw}, attn_std, rng);
  add_param("text.local_proj", {d, kw}, attn_std, rng);

  geometry_->positions.resize(kPositionTableRows * kw);
  for (std::size_t p = 0; p < kPositionTableRows; ++p)
    for (std::size_t j = 0; j < kw; ++j) geometry_->positions[p * kw + j] = sinusoid(p, j, kw);
}

Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

Model Model::clone() const {
  Model copy(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) copy.params_[i].value.assign(params_[i].value.data());
  return copy;
}

Tensor& Model::add_param(std::string name, Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = stddev == 0.0 ? 0.0 : stddev * rng.normal();
  params_.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values), true)});
  return params_.back().value;
}

const WordPieceVocab& Model::vocab() const { return WordPieceVocab::builtin(); }

const Tensor& Model::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw InvalidArgument("no parameter named '" + std::string(name) + "'");
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

ImageEmbedding Model::encode_image(const Tensor& pixels) const {
  const std::size_t side = config_.image_side;
  const Shape expected{side, side, config_.image_channels};
  if (pixels.shape() != expected) {
    throw InvalidArgument("encode_image: expected pixels of shape " + shape_str(expected) + ", got " +
                          shape_str(pixels.shape()));
  }
  Tensor features = pixels;
  Tensor local_map;
  for (std::size_t l = 0; l < geometry_->convs.size(); ++l) {
    const auto& conv = geometry_->convs[l];
    const std::size_t rows = conv.out_h * conv.out_w;
    const std::size_t cols = conv.im2col->size() / rows;
    const Tensor patches = gather(features, conv.im2col, {rows, cols});
    features = relu(add_row(matmul(patches, parameter("image.conv" + std::to_string(l) + ".weight")),
                            parameter("image.conv" + std::to_string(l) + ".bias")));
    if (l == config_.local_layer_index()) local_map = features;
  }
  const Tensor pooled = matmul(geometry_->pool, local_map);  // (M, C)
  ImageEmbedding out;
  out.local = matmul(parameter("image.local_proj"), transpose(pooled));
  const Tensor mean_features = matmul(geometry_->mean_row, features);  // (1, C)
  out.global = reshape(matmul(parameter("image.global_proj"), reshape(mean_features, {mean_features.dim(1), 1})),
                       {config_.embed_dim});
  return out;
}

TextEmbedding Model::encode_text(const TokenizedReport& report, bool with_local) const {
  if (report.tokens.empty()) throw InvalidArgument("encode_text: empty report");
  if (report.subwords.size() != report.tokens.size()) {
    throw InvalidArgument("encode_text: report has no word-piece spans");
  }
  const std::size_t kw = config_.subword_dim;
  const std::size_t n = report.subword_count();
  const WordPieceVocab& v = vocab();

  std::vector<std::int64_t> index;
  index.reserve(n * kw);
  for (const auto& pieces : report.subwords) {
    for (const auto& piece : pieces) {
      const auto row = static_cast<std::int64_t>(v.id(piece) * kw);
      for (std::size_t j = 0; j < kw; ++j) index.push_back(row + static_cast<std::int64_t>(j));
    }
  }
  Tensor x = gather(parameter("text.embedding"), std::move(index), {n, kw});
  if (config_.position_signal) {
    std::vector<double> pos(n * kw);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t j = 0; j < kw; ++j)
        pos[p * kw + j] = p < kPositionTableRows ? geometry_->positions[p * kw + j] : sinusoid(p, j, kw);
    x = add(x, Tensor::from({n, kw}, std::move(pos)));
  }

  const Tensor q = matmul(x, parameter("text.attn.query"));
  const Tensor k = matmul(x, parameter("text.attn.key"));
  const Tensor val = matmul(x, parameter("text.attn.value"));
  const Tensor attn = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(kw))), 1);
  const Tensor h = add(x, matmul(matmul(attn, val), parameter("text.attn.output")));
  const Tensor hidden = relu(add_row(matmul(h, parameter("text.ffn.w1")), parameter("text.ffn.b1")));
  const Tensor y = add(h, add_row(matmul(hidden, parameter("text.ffn.w2")), parameter("text.ffn.b2")));

  TextEmbedding out;
  out.subword = transpose(y);  // (K, N)
  const Tensor mean_row = Tensor::full({1, n}, 1.0 / static_cast<double>(n));
  const Tensor pooled = reshape(matmul(mean_row, y), {kw, 1});
  out.global = reshape(matmul(parameter("text.global_proj"), pooled), {config_.embed_dim});
  if (with_local) {
    const auto spans = word_spans(report);
    out.local = aggregate_subwords(out.subword, spans, parameter("text.local_proj"));
  }
  return out;
}

}  // namespace prdlab
