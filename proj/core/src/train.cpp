#include "tsep/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tsep/log.hpp"
#include "tsep/random.hpp"

namespace tsep {

TrainExample make_example(const Mixture& m, const StftConfig& cfg,
                          double activity_threshold_db) {
  TrainExample ex;
  ex.mix = m.mix;
  ex.mix_spec = stft(m.mix, cfg);
  ex.features = log_magnitude_features(ex.mix_spec);
  ex.sources = m.sources;
  for (const auto& s : m.sources) ex.source_specs.push_back(stft(s, cfg).bins);
  ex.activity = compute_activity_labels(m.sources, cfg, activity_threshold_db);
  return ex;
}

Separation separate(const TsNetParams& p, const Spectrogram& mix_spec,
                    const RealGrid& features,
                    std::span<const SpeakerEmbedding> targets) {
  Separation s;
  s.masks = forward_sep(p, features, targets);
  for (const auto& m : s.masks) {
    Spectrogram y = mix_spec;
    y.bins = mix_spec.bins.array() * m.array().cast<std::complex<double>>();
    s.waveforms.push_back(istft(y));
    s.spectra.push_back(std::move(y.bins));
  }
  return s;
}

LossValue evaluate_loss(const TsNetParams& p, const TrainExample& ex,
                        std::span<const SpeakerEmbedding> targets,
                        const LossSpec& spec, ForwardTrace* trace,
                        std::vector<Eigen::MatrixXd>* out_grad) {
  if (targets.size() != ex.sources.size()) {
    throw std::invalid_argument("one target embedding per source is required");
  }
  LossValue v;
  if (spec.objective == Objective::kVad) {
    Eigen::MatrixXd pred = forward_vad(p, ex.features, targets, trace);
    v.bce = bce_vad(pred, ex.activity);
    v.total = v.bce;
    if (out_grad) {
      Eigen::MatrixXd g = bce_vad_grad(pred, ex.activity);
      out_grad->clear();
      for (Eigen::Index k = 0; k < g.rows(); ++k) {
        out_grad->push_back(g.row(k).transpose());
      }
    }
    return v;
  }

  spec.osl.validate();
  auto masks = forward_sep(p, ex.features, targets, trace);
  const auto& X = ex.mix_spec.bins;
  std::vector<ComplexGrid> Y_hat;
  std::vector<Waveform> y_hat;
  for (const auto& m : masks) {
    Spectrogram s = ex.mix_spec;
    s.bins = X.array() * m.array().cast<std::complex<double>>();
    y_hat.push_back(istft(s));
    Y_hat.push_back(std::move(s.bins));
  }
  v.sep = combined_sep_loss(y_hat, ex.sources, Y_hat, ex.source_specs, spec.osl);
  v.total = v.sep.total;
  if (out_grad) {
    auto gw = l_sep_grad(y_hat, ex.sources);
    std::vector<ComplexGrid> gs;
    if (spec.osl.lambda != 0.0) gs = osl_grad(Y_hat, ex.source_specs, spec.osl);
    out_grad->clear();
    const auto frames = static_cast<std::size_t>(X.rows());
    for (std::size_t k = 0; k < masks.size(); ++k) {
      ComplexGrid G = istft_vjp(gw[k], ex.mix_spec.config, frames, ex.mix.size());
      if (!gs.empty()) G += spec.osl.lambda * gs[k];
      // Y = M * X with real M: dL/dM = Re(G) Re(X) + Im(G) Im(X).
      out_grad->push_back((G.conjugate().array() * X.array()).real().matrix());
    }
  }
  return v;
}

TrainResult train(TsNetParams init, std::span<const TrainExample> data,
                  const EmbeddingProvider& embeddings, const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const bool want_mask = cfg.loss.objective == Objective::kSeparation;
  if (want_mask != (init.head() == HeadKind::kMask)) {
    throw std::invalid_argument("train: loss objective does not match the network head");
  }
  if (cfg.optimizer.learning_rate < 0.0 || cfg.optimizer.momentum < 0.0 ||
      cfg.optimizer.momentum >= 1.0) {
    throw std::invalid_argument("train: invalid optimizer settings");
  }
  init.validate();
  if (cfg.checkpoint_dir) std::filesystem::create_directories(*cfg.checkpoint_dir);

  TrainResult res{std::move(init), {}};
  auto& p = res.params;
  std::vector<double> velocity(p.size(), 0.0);
  std::vector<std::size_t> order(data.size());
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x6f72, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      if (cfg.max_steps && step >= *cfg.max_steps) break;
      const auto targets = embeddings(i, epoch);
      ForwardTrace trace;
      std::vector<Eigen::MatrixXd> og;
      LossValue lv = evaluate_loss(p, data[i], targets, cfg.loss, &trace, &og);
      std::vector<double> g = backward(p, trace, og);
      double norm2 = 0.0;
      for (double x : g) norm2 += x * x;
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(lv.total) || !std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "non-finite training loss at step " << step << " (epoch " << epoch
            << ", example " << i << "): total=" << lv.total << " bce=" << lv.bce
            << " l_sep=" << lv.sep.l_sep << " osl=" << lv.sep.osl
            << " grad_norm=" << norm;
        log::emit(log::Level::kError, "train_nan",
                  {{"step", step}, {"epoch", epoch}, {"example", i}});
        throw std::runtime_error(msg.str());
      }
      double scale = 1.0;
      if (cfg.optimizer.clip_norm > 0.0 && norm > cfg.optimizer.clip_norm) {
        scale = cfg.optimizer.clip_norm / norm;
      }
      auto& w = p.values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        velocity[j] = cfg.optimizer.momentum * velocity[j] -
                      cfg.optimizer.learning_rate * scale * g[j];
        w[j] += velocity[j];
      }
      res.curve.push_back({step, epoch, i, lv, norm});
      log::debug("train_step", {{"step", step}, {"epoch", epoch}, {"loss", lv.total}});
      ++step;
      if (cfg.on_step) cfg.on_step(step, p);
    }
    if (cfg.checkpoint_dir) {
      save_checkpoint(*cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), p,
                      {{"stage", cfg.stage}, {"seed", cfg.seed}, {"epoch", epoch},
                       {"step", step}});
    }
    if (cfg.max_steps && step >= *cfg.max_steps) break;
  }
  return res;
}

void write_loss_csv(std::ostream& os, std::span<const StepRecord> curve) {
  os << "step,epoch,example,bce,l_sep,osl,total,grad_norm\n";
  os.precision(17);
  for (const auto& r : curve) {
    os << r.step << ',' << r.epoch << ',' << r.example << ',' << r.loss.bce << ','
       << r.loss.sep.l_sep << ',' << r.loss.sep.osl << ',' << r.loss.total << ','
       << r.grad_norm << '\n';
  }
}

}  // namespace tsep
