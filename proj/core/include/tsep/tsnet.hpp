// Speaker-conditioned network: a speaker-independent trunk over the mixture
// features, the trunk latent stacked with each target embedding, shared
// speaker-dependent layers and a VAD head (one output per frame) or a mask
// head (one output per frequency bin).
//
//   h1 = tanh(X W1' + b1)            T x R
//   h2 = tanh(h1 W2' + b2)
//   z_0 = h2_0, z_t = a z_{t-1} + (1 - a) h2_t
//   s1 = tanh([z, I_k] S1' + c1)
//   s2 = tanh(s1 S2' + c2)
//   out_k = sigmoid(s2 H' + h)       T x 1 or T x F
//
// Parameters live in one flat vector; the accessors return views into it.

#ifndef TSEP_TSNET_HPP_
#define TSEP_TSNET_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tsep/embed.hpp"
#include "tsep/signal.hpp"

namespace tsep {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ParamView = Eigen::Map<RowMatrix>;
using ConstParamView = Eigen::Map<const RowMatrix>;

struct TsNetDims {
  Eigen::Index F = 129;  // input features and mask bins
  Eigen::Index E = 40;   // embedding size
  Eigen::Index R = 32;   // latent size
  Eigen::Index K_max = 8;
  double smoothing = 0.8;  // temporal mixer coefficient a in [0, 1)

  void validate() const;
  bool operator==(const TsNetDims&) const = default;
};

nlohmann::json to_json(const TsNetDims& d);
TsNetDims dims_from_json(const nlohmann::json& j);

enum class HeadKind { kVad, kMask };
std::string_view to_string(HeadKind h);
HeadKind parse_head_kind(std::string_view s);

enum class ParamBlock { kW1, kB1, kW2, kB2, kS1, kC1, kS2, kC2, kHead, kHeadBias };
inline constexpr std::size_t kNumParamBlocks = 10;

class TsNetParams {
 public:
  TsNetParams(TsNetDims dims, HeadKind head);  // all zeros
  // Glorot-uniform weights, zero biases.
  static TsNetParams random(TsNetDims dims, HeadKind head, std::uint64_t seed);

  const TsNetDims& dims() const { return dims_; }
  HeadKind head() const { return head_; }
  Eigen::Index head_outputs() const { return head_ == HeadKind::kVad ? 1 : dims_.F; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  std::size_t size() const { return data_.size(); }

  ParamView block(ParamBlock b);
  ConstParamView block(ParamBlock b) const;
  std::size_t block_offset(ParamBlock b) const;

  // Hash of dims, head and every parameter bit.
  std::uint64_t fingerprint() const;
  void validate() const;

 private:
  struct Shape {
    std::size_t offset;
    Eigen::Index rows, cols;
  };
  TsNetDims dims_;
  HeadKind head_;
  std::array<Shape, kNumParamBlocks> shapes_;
  std::vector<double> data_;
};

// Activations cached by a forward pass for backward().
struct ForwardTrace {
  std::uint64_t fingerprint = 0;
  HeadKind head = HeadKind::kVad;
  Eigen::MatrixXd x, h1, h2, z;
  std::vector<Eigen::VectorXd> embeddings;
  std::vector<Eigen::MatrixXd> s1, s2, out;
};

// K x T speech probabilities.
Eigen::MatrixXd forward_vad(const TsNetParams& p, const RealGrid& features,
                            std::span<const SpeakerEmbedding> targets,
                            ForwardTrace* trace = nullptr);
// K masks of T x F.
std::vector<RealGrid> forward_sep(const TsNetParams& p, const RealGrid& features,
                                  std::span<const SpeakerEmbedding> targets,
                                  ForwardTrace* trace = nullptr);

// Mask head whose every row is the VAD head; everything else copied.
TsNetParams init_stage2(const TsNetParams& vad);

// Gradient of a loss with respect to all parameters, given dL/d(out_k) for
// each speaker (T x 1 for the VAD head, T x F for the mask head).
// Throws std::logic_error when p no longer matches the trace.
std::vector<double> backward(const TsNetParams& p, const ForwardTrace& trace,
                             std::span<const Eigen::MatrixXd> out_grad);

// Log-magnitude, normalised to zero mean and unit variance per bin over the
// utterance.
RealGrid log_magnitude_features(const Spectrogram& s);

// Binary checkpoint: "TSEPCKPT", u64 little-endian header length, JSON
// header, then the parameters as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const TsNetParams& p,
                     const nlohmann::json& meta = nlohmann::json::object());
struct Checkpoint {
  TsNetParams params;
  nlohmann::json header;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tsep

#endif  // TSEP_TSNET_HPP_
