#include "tsep/tsnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "tsep/random.hpp"

namespace tsep {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};
constexpr double kFeatureFloor = 1e-5;

Eigen::MatrixXd tanh_of(const Eigen::MatrixXd& a) { return a.array().tanh().matrix(); }

// Rows of X times W' plus a bias row.
Eigen::MatrixXd affine(const Eigen::MatrixXd& x, ConstParamView w, ConstParamView b) {
  Eigen::MatrixXd out = x * w.transpose();
  out.rowwise() += b.row(0);
  return out;
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void check_inputs(const TsNetParams& p, const RealGrid& x,
                  std::span<const SpeakerEmbedding> targets) {
  const auto& d = p.dims();
  if (x.cols() != d.F) {
    throw std::invalid_argument("feature dim " + std::to_string(x.cols()) +
                                " does not match network F=" + std::to_string(d.F));
  }
  if (targets.empty()) throw std::invalid_argument("no target embeddings");
  if (static_cast<Eigen::Index>(targets.size()) > d.K_max) {
    throw std::invalid_argument("more targets than K_max");
  }
  for (const auto& e : targets) {
    if (e.dim() != d.E) {
      throw std::invalid_argument("embedding dim " + std::to_string(e.dim()) +
                                  " does not match network E=" + std::to_string(d.E));
    }
  }
  if (!x.allFinite()) throw std::invalid_argument("features contain non-finite values");
}

// Shared by both heads; fills the trace and returns per-speaker outputs.
std::vector<Eigen::MatrixXd> forward(const TsNetParams& p, const RealGrid& x,
                                     std::span<const SpeakerEmbedding> targets,
                                     ForwardTrace& tr) {
  check_inputs(p, x, targets);
  const auto& d = p.dims();
  const Eigen::Index T = x.rows();
  tr.fingerprint = p.fingerprint();
  tr.head = p.head();
  tr.x = x;
  tr.h1 = tanh_of(affine(x, p.block(ParamBlock::kW1), p.block(ParamBlock::kB1)));
  tr.h2 = tanh_of(affine(tr.h1, p.block(ParamBlock::kW2), p.block(ParamBlock::kB2)));
  tr.z.resize(T, d.R);
  const double a = d.smoothing;
  for (Eigen::Index t = 0; t < T; ++t) {
    tr.z.row(t) = t == 0 ? Eigen::RowVectorXd(tr.h2.row(0))
                         : Eigen::RowVectorXd(a * tr.z.row(t - 1) + (1.0 - a) * tr.h2.row(t));
  }

  auto s1w = p.block(ParamBlock::kS1);
  const Eigen::MatrixXd s1z = s1w.leftCols(d.R);
  const Eigen::MatrixXd s1e = s1w.rightCols(d.E);
  const Eigen::MatrixXd zpart = tr.z * s1z.transpose();
  tr.embeddings.clear();
  tr.s1.clear();
  tr.s2.clear();
  tr.out.clear();
  for (const auto& e : targets) {
    Eigen::RowVectorXd bias = p.block(ParamBlock::kC1);
    bias += (s1e * e.values()).transpose();
    Eigen::MatrixXd pre1 = zpart;
    pre1.rowwise() += bias;
    Eigen::MatrixXd s1 = tanh_of(pre1);
    Eigen::MatrixXd s2 = tanh_of(affine(s1, p.block(ParamBlock::kS2), p.block(ParamBlock::kC2)));
    Eigen::MatrixXd logits = affine(s2, p.block(ParamBlock::kHead), p.block(ParamBlock::kHeadBias));
    Eigen::MatrixXd out = (1.0 + (-logits.array()).exp()).inverse().matrix();
    tr.embeddings.push_back(e.values());
    tr.s1.push_back(std::move(s1));
    tr.s2.push_back(std::move(s2));
    tr.out.push_back(std::move(out));
  }
  return tr.out;
}

}  // namespace

void TsNetDims::validate() const {
  if (F < 1 || E < 1 || R < 1 || K_max < 1) {
    throw std::invalid_argument("network dims F, E, R, K_max must be positive");
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw std::invalid_argument("smoothing must lie in [0, 1)");
  }
}

nlohmann::json to_json(const TsNetDims& d) {
  return {{"F", d.F}, {"E", d.E}, {"R", d.R}, {"K_max", d.K_max}, {"smoothing", d.smoothing}};
}

TsNetDims dims_from_json(const nlohmann::json& j) {
  TsNetDims d;
  d.F = j.at("F").get<Eigen::Index>();
  d.E = j.at("E").get<Eigen::Index>();
  d.R = j.at("R").get<Eigen::Index>();
  d.K_max = j.at("K_max").get<Eigen::Index>();
  d.smoothing = j.at("smoothing").get<double>();
  d.validate();
  return d;
}

std::string_view to_string(HeadKind h) { return h == HeadKind::kVad ? "vad" : "mask"; }

HeadKind parse_head_kind(std::string_view s) {
  if (s == "vad") return HeadKind::kVad;
  if (s == "mask") return HeadKind::kMask;
  throw std::invalid_argument("unknown head kind '" + std::string(s) + "'");
}

TsNetParams::TsNetParams(TsNetDims dims, HeadKind head) : dims_(dims), head_(head) {
  dims_.validate();
  const auto F = dims_.F, E = dims_.E, R = dims_.R;
  const Eigen::Index O = head_outputs();
  const std::array<std::pair<Eigen::Index, Eigen::Index>, kNumParamBlocks> sizes{{
      {R, F}, {1, R}, {R, R}, {1, R}, {R, R + E}, {1, R}, {R, R}, {1, R}, {O, R}, {1, O}}};
  std::size_t off = 0;
  for (std::size_t i = 0; i < kNumParamBlocks; ++i) {
    shapes_[i] = {off, sizes[i].first, sizes[i].second};
    off += static_cast<std::size_t>(sizes[i].first * sizes[i].second);
  }
  data_.assign(off, 0.0);
}

TsNetParams TsNetParams::random(TsNetDims dims, HeadKind head, std::uint64_t seed) {
  TsNetParams p(dims, head);
  std::mt19937_64 rng(derive_seed(seed, {0x7473}));
  for (auto b : {ParamBlock::kW1, ParamBlock::kW2, ParamBlock::kS1, ParamBlock::kS2,
                 ParamBlock::kHead}) {
    auto w = p.block(b);
    const double lim = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-lim, lim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  }
  return p;
}

ParamView TsNetParams::block(ParamBlock b) {
  const auto& s = shapes_[static_cast<std::size_t>(b)];
  return ParamView(data_.data() + s.offset, s.rows, s.cols);
}

ConstParamView TsNetParams::block(ParamBlock b) const {
  const auto& s = shapes_[static_cast<std::size_t>(b)];
  return ConstParamView(data_.data() + s.offset, s.rows, s.cols);
}

std::size_t TsNetParams::block_offset(ParamBlock b) const {
  return shapes_[static_cast<std::size_t>(b)].offset;
}

std::uint64_t TsNetParams::fingerprint() const {
  std::uint64_t h = derive_seed(static_cast<std::uint64_t>(head_),
                                {static_cast<std::uint64_t>(dims_.F),
                                 static_cast<std::uint64_t>(dims_.E),
                                 static_cast<std::uint64_t>(dims_.R),
                                 static_cast<std::uint64_t>(dims_.K_max),
                                 std::bit_cast<std::uint64_t>(dims_.smoothing)});
  for (double v : data_) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

void TsNetParams::validate() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw std::invalid_argument("parameter " + std::to_string(i) + " is not finite");
    }
  }
}

Eigen::MatrixXd forward_vad(const TsNetParams& p, const RealGrid& features,
                            std::span<const SpeakerEmbedding> targets,
                            ForwardTrace* trace) {
  if (p.head() != HeadKind::kVad) throw std::invalid_argument("forward_vad needs a VAD head");
  ForwardTrace local;
  auto outs = forward(p, features, targets, trace ? *trace : local);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(outs.size()), features.rows());
  for (std::size_t k = 0; k < outs.size(); ++k) {
    v.row(static_cast<Eigen::Index>(k)) = outs[k].col(0).transpose();
  }
  return v;
}

std::vector<RealGrid> forward_sep(const TsNetParams& p, const RealGrid& features,
                                  std::span<const SpeakerEmbedding> targets,
                                  ForwardTrace* trace) {
  if (p.head() != HeadKind::kMask) throw std::invalid_argument("forward_sep needs a mask head");
  ForwardTrace local;
  return forward(p, features, targets, trace ? *trace : local);
}

TsNetParams init_stage2(const TsNetParams& vad) {
  if (vad.head() != HeadKind::kVad) throw std::invalid_argument("init_stage2 needs a VAD head");
  TsNetParams out(vad.dims(), HeadKind::kMask);
  const std::size_t shared = vad.block_offset(ParamBlock::kHead);
  std::copy_n(vad.values().begin(), shared, out.values().begin());
  auto hw = out.block(ParamBlock::kHead);
  auto hb = out.block(ParamBlock::kHeadBias);
  hw.rowwise() = vad.block(ParamBlock::kHead).row(0);
  hb.setConstant(vad.block(ParamBlock::kHeadBias)(0, 0));
  return out;
}

std::vector<double> backward(const TsNetParams& p, const ForwardTrace& tr,
                             std::span<const Eigen::MatrixXd> out_grad) {
  if (tr.fingerprint != p.fingerprint() || tr.head != p.head()) {
    throw std::logic_error("stale forward trace: parameters changed since the forward pass");
  }
  if (out_grad.size() != tr.out.size()) {
    throw std::invalid_argument("backward: expected one output gradient per speaker");
  }
  const auto& d = p.dims();
  const Eigen::Index T = tr.x.rows();
  TsNetParams g(d, p.head());
  auto gW1 = g.block(ParamBlock::kW1), gB1 = g.block(ParamBlock::kB1);
  auto gW2 = g.block(ParamBlock::kW2), gB2 = g.block(ParamBlock::kB2);
  auto gS1 = g.block(ParamBlock::kS1), gC1 = g.block(ParamBlock::kC1);
  auto gS2 = g.block(ParamBlock::kS2), gC2 = g.block(ParamBlock::kC2);
  auto gH = g.block(ParamBlock::kHead), gHb = g.block(ParamBlock::kHeadBias);

  const Eigen::MatrixXd s1z = p.block(ParamBlock::kS1).leftCols(d.R);
  Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(T, d.R);
  for (std::size_t k = 0; k < tr.out.size(); ++k) {
    const auto& out = tr.out[k];
    if (out_grad[k].rows() != out.rows() || out_grad[k].cols() != out.cols()) {
      throw std::invalid_argument("backward: output gradient shape mismatch");
    }
    Eigen::MatrixXd da = (out_grad[k].array() * out.array() * (1.0 - out.array())).matrix();
    gH += da.transpose() * tr.s2[k];
    gHb += da.colwise().sum();
    Eigen::MatrixXd d2 = ((da * p.block(ParamBlock::kHead)).array() *
                          (1.0 - tr.s2[k].array().square())).matrix();
    gS2 += d2.transpose() * tr.s1[k];
    gC2 += d2.colwise().sum();
    Eigen::MatrixXd d1 = ((d2 * p.block(ParamBlock::kS2)).array() *
                          (1.0 - tr.s1[k].array().square())).matrix();
    gS1.leftCols(d.R) += d1.transpose() * tr.z;
    Eigen::VectorXd col = d1.colwise().sum().transpose();
    gS1.rightCols(d.E) += col * tr.embeddings[k].transpose();
    gC1 += col.transpose();
    dz += d1 * s1z;
  }

  // Reverse of the causal smoother.
  const double a = d.smoothing;
  Eigen::MatrixXd dh2(T, d.R);
  for (Eigen::Index t = T - 1; t >= 1; --t) {
    dh2.row(t) = (1.0 - a) * dz.row(t);
    dz.row(t - 1) += a * dz.row(t);
  }
  if (T > 0) dh2.row(0) = dz.row(0);

  Eigen::MatrixXd dp2 = (dh2.array() * (1.0 - tr.h2.array().square())).matrix();
  gW2 += dp2.transpose() * tr.h1;
  gB2 += dp2.colwise().sum();
  Eigen::MatrixXd dp1 = ((dp2 * p.block(ParamBlock::kW2)).array() *
                         (1.0 - tr.h1.array().square())).matrix();
  gW1 += dp1.transpose() * tr.x;
  gB1 += dp1.colwise().sum();
  return std::move(g.values());
}

RealGrid log_magnitude_features(const Spectrogram& s) {
  RealGrid f = (s.magnitude().array() + kFeatureFloor).log().matrix();
  if (f.rows() == 0) return f;
  Eigen::RowVectorXd mean = f.colwise().mean();
  f.rowwise() -= mean;
  Eigen::RowVectorXd sd =
      (f.array().square().colwise().sum() / static_cast<double>(f.rows())).sqrt();
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    if (sd(c) > 1e-8) f.col(c) /= sd(c);
  }
  return f;
}

void save_checkpoint(const std::filesystem::path& path, const TsNetParams& p,
                     const nlohmann::json& meta) {
  nlohmann::json header = meta.is_object() ? meta : nlohmann::json::object();
  header["dims"] = to_json(p.dims());
  header["head"] = to_string(p.head());
  header["dtype"] = "f64le";
  header["count"] = p.size();
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : p.values()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  }
  const std::uint64_t len = read_u64(is);
  if (len > (1u << 24)) throw std::runtime_error("checkpoint header too large");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint truncated");
  nlohmann::json header = nlohmann::json::parse(text);
  if (header.value("dtype", "") != "f64le") {
    throw std::runtime_error("unsupported checkpoint dtype");
  }
  TsNetParams p(dims_from_json(header.at("dims")),
                parse_head_kind(header.at("head").get<std::string>()));
  if (header.at("count").get<std::size_t>() != p.size()) {
    throw std::runtime_error("checkpoint parameter count does not match its dims");
  }
  for (double& v : p.values()) v = std::bit_cast<double>(read_u64(is));
  p.validate();
  return {std::move(p), std::move(header)};
}

}  // namespace tsep
