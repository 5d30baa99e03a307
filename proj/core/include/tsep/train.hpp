// Training objectives on top of the network and a momentum SGD loop.

#ifndef TSEP_TRAIN_HPP_
#define TSEP_TRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "tsep/embed.hpp"
#include "tsep/losses.hpp"
#include "tsep/mixture.hpp"
#include "tsep/tsnet.hpp"

namespace tsep {

// One training mixture prepared for a given STFT.
struct TrainExample {
  Waveform mix;
  Spectrogram mix_spec;
  RealGrid features;
  std::vector<Waveform> sources;
  std::vector<ComplexGrid> source_specs;
  Eigen::MatrixXd activity;  // K x T at the same hop as mix_spec
};

TrainExample make_example(const Mixture& m, const StftConfig& cfg,
                          double activity_threshold_db = -40.0);

enum class Objective { kVad, kSeparation };

struct LossSpec {
  Objective objective = Objective::kVad;
  OslConfig osl;  // separation only; osl.lambda = 0 disables the spectral term
};

struct LossValue {
  double bce = 0.0;
  SepLossValue sep;
  double total = 0.0;
};

// Loss of the network on one example; fills out_grad (dL/d output per
// speaker) when it is non-null.
LossValue evaluate_loss(const TsNetParams& p, const TrainExample& ex,
                        std::span<const SpeakerEmbedding> targets,
                        const LossSpec& spec, ForwardTrace* trace = nullptr,
                        std::vector<Eigen::MatrixXd>* out_grad = nullptr);

// Separated waveforms and masked spectra for each target.
struct Separation {
  std::vector<RealGrid> masks;
  std::vector<ComplexGrid> spectra;
  std::vector<Waveform> waveforms;
};
Separation separate(const TsNetParams& p, const Spectrogram& mix_spec,
                    const RealGrid& features,
                    std::span<const SpeakerEmbedding> targets);

struct OptimizerSpec {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;  // global gradient norm cap, 0 disables
};

// Embeddings for example i at the given epoch, one per source.
using EmbeddingProvider =
    std::function<std::vector<SpeakerEmbedding>(std::size_t example, int epoch)>;

struct TrainConfig {
  LossSpec loss;
  OptimizerSpec optimizer;
  int epochs = 1;
  std::optional<int> max_steps;  // stop after this many updates
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_<n>.ckpt
  int stage = 1;
  // Called after every update with the step count so far.
  std::function<void(int, const TsNetParams&)> on_step;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  std::size_t example = 0;
  LossValue loss;
  double grad_norm = 0.0;
};

struct TrainResult {
  TsNetParams params;
  std::vector<StepRecord> curve;
};

// Batch size one, example order shuffled each epoch from the seed.
// Throws std::runtime_error on a non-finite loss or gradient.
TrainResult train(TsNetParams init, std::span<const TrainExample> data,
                  const EmbeddingProvider& embeddings, const TrainConfig& cfg);

void write_loss_csv(std::ostream& os, std::span<const StepRecord> curve);

}  // namespace tsep

#endif  // TSEP_TRAIN_HPP_
