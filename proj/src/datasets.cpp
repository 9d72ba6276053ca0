#include "adaforge/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "adaforge/hashing.hpp"
#include "adaforge/rng.hpp"

namespace adaforge {

namespace {

int64_t effective_classes(const ShiftSpec& spec) {
  switch (spec.family) {
    case DataFamily::Moons2d:
    case DataFamily::RoadwaySeg: return 2;
    default: return spec.classes;
  }
}

}  // namespace

const char* family_name(DataFamily f) {
  switch (f) {
    case DataFamily::Gauss2d: return "gauss2d";
    case DataFamily::Moons2d: return "moons2d";
    case DataFamily::TextureCls: return "texture_cls";
    case DataFamily::RoadwaySeg: return "roadway_seg";
  }
  return "?";
}

DataFamily family_from_name(const std::string& name) {
  if (name == "gauss2d") return DataFamily::Gauss2d;
  if (name == "moons2d") return DataFamily::Moons2d;
  if (name == "texture_cls") return DataFamily::TextureCls;
  if (name == "roadway_seg") return DataFamily::RoadwaySeg;
  throw std::invalid_argument("unknown dataset family: " + name);
}

void ShiftSpec::validate() const {
  if (severity < 0.0 || severity > 1.0)
    throw std::invalid_argument("severity must be in [0, 1], got " +
                                std::to_string(severity));
  if (n_train < 4 || n_test < 4)
    throw std::invalid_argument("dataset sizes must be at least 4");
  const int64_t c = effective_classes(*this);
  if (c < 2) throw std::invalid_argument("need at least 2 classes");
  if (family == DataFamily::TextureCls && (classes < 2 || classes > 20))
    throw std::invalid_argument("texture_cls supports 2..20 classes, got " +
                                std::to_string(classes));
}

Shape ShiftSpec::sample_shape() const {
  switch (family) {
    case DataFamily::Gauss2d:
    case DataFamily::Moons2d: return Shape{2};
    case DataFamily::TextureCls: return Shape{3, 32, 32};
    case DataFamily::RoadwaySeg: return Shape{1, 48, 64};
  }
  throw std::invalid_argument("unknown dataset family");
}

std::string ShiftSpec::canonical() const {
  char sev[32];
  std::snprintf(sev, sizeof sev, "%.6g", severity);
  return std::string("data{family=") + family_name(family) + ";severity=" + sev +
         ";classes=" + std::to_string(classes) + ";ntrain=" + std::to_string(n_train) +
         ";ntest=" + std::to_string(n_test) + ";seed=" + std::to_string(seed) + "}";
}

namespace {

// ---------------------------------------------------------------------------
// generators (source-distribution draws; the target transform comes after)
// ---------------------------------------------------------------------------

// Blob geometry: radius/noise chosen so the Bayes accuracy sits just below
// saturation (about 0.98 for 3 classes), keeping headroom between an adapted
// model and the target-labeled upper bound.
constexpr double kGaussRadius = 1.5;
constexpr double kGaussNoise = 0.6;

void gen_gauss2d(const ShiftSpec& spec, Rng& rng, int64_t n, Tensor& x,
                 std::vector<int64_t>& y) {
  const int64_t c = effective_classes(spec);
  x = Tensor(Shape{n, 2});
  y.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t k = i % c;  // balanced within one sample
    const double ang = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(c);
    x[static_cast<size_t>(2 * i)] =
        kGaussRadius * std::cos(ang) + kGaussNoise * rng.normal();
    x[static_cast<size_t>(2 * i + 1)] =
        kGaussRadius * std::sin(ang) + kGaussNoise * rng.normal();
    y[static_cast<size_t>(i)] = k;
  }
}

void gen_moons2d(const ShiftSpec& spec, Rng& rng, int64_t n, Tensor& x,
                 std::vector<int64_t>& y) {
  (void)spec;
  x = Tensor(Shape{n, 2});
  y.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int64_t k = i % 2;
    const double t = M_PI * rng.uniform();
    double px, py;
    if (k == 0) {
      px = std::cos(t);
      py = std::sin(t);
    } else {
      px = 1.0 - std::cos(t);
      py = 0.5 - std::sin(t);
    }
    x[static_cast<size_t>(2 * i)] = px + 0.15 * rng.normal();
    x[static_cast<size_t>(2 * i + 1)] = py + 0.15 * rng.normal();
    y[static_cast<size_t>(i)] = k;
  }
}

void gen_texture(const ShiftSpec& spec, Rng& rng, int64_t n, Tensor& x,
                 std::vector<int64_t>& y) {
  const int64_t c = effective_classes(spec);
  const int64_t H = 32, W = 32;
  x = Tensor(Shape{n, 3, H, W});
  y.resize(static_cast<size_t>(n));
  const double chan_gain[3] = {1.0, 0.8, 0.6};
  for (int64_t i = 0; i < n; ++i) {
    const int64_t k = i % c;
    y[static_cast<size_t>(i)] = k;
    // Class = one of 10 grating orientations at one of 2 spatial frequencies.
    const double ori = M_PI * static_cast<double>(k % 10) / 10.0;
    const double freq = (k < 10) ? 2.0 : 4.0;
    const double phase = 2.0 * M_PI * rng.uniform();
    const double co = std::cos(ori), si = std::sin(ori);
    double* base = x.data() + i * 3 * H * W;
    for (int64_t yy = 0; yy < H; ++yy) {
      for (int64_t xx = 0; xx < W; ++xx) {
        const double proj = (static_cast<double>(xx) * co + static_cast<double>(yy) * si) /
                            static_cast<double>(W);
        const double v = 0.5 + 0.38 * std::sin(2.0 * M_PI * freq * proj + phase);
        for (int ch = 0; ch < 3; ++ch)
          base[ch * H * W + yy * W + xx] = chan_gain[ch] * v + 0.12 * rng.normal();
      }
    }
  }
}

void gen_roadway(const ShiftSpec& spec, Rng& rng, int64_t n, Tensor& x,
                 std::vector<int64_t>& y) {
  (void)spec;
  const int64_t H = 48, W = 64;
  x = Tensor(Shape{n, 1, H, W});
  y.assign(static_cast<size_t>(n * H * W), 0);
  for (int64_t i = 0; i < n; ++i) {
    // Free-space trapezoid with an area fraction pinned to [0.2, 0.6].
    int64_t horizon = 0;
    double cxb = 0, wb = 0, wt = 0, cxt = 0;
    for (int tries = 0; tries < 100; ++tries) {
      horizon = 14 + rng.uniform_int(13);  // rows 14..26
      cxb = static_cast<double>(W) * rng.uniform(0.42, 0.58);
      wb = static_cast<double>(W) * rng.uniform(0.30, 0.47);
      wt = static_cast<double>(W) * rng.uniform(0.06, 0.20);
      cxt = cxb + static_cast<double>(W) * rng.uniform(-0.08, 0.08);
      const double rows = static_cast<double>(H - horizon);
      const double frac = rows * (wt + wb) / static_cast<double>(H * W);
      if (frac >= 0.2 && frac <= 0.6) break;
    }
    double* img = x.data() + i * H * W;
    for (int64_t yy = 0; yy < H; ++yy) {
      const bool sky = yy < horizon;
      double half = 0, cx = 0;
      if (!sky) {
        const double t = (H - horizon) > 1
                             ? static_cast<double>(yy - horizon) /
                                   static_cast<double>(H - 1 - horizon)
                             : 1.0;
        half = wt + (wb - wt) * t;
        cx = cxt + (cxb - cxt) * t;
      }
      for (int64_t xx = 0; xx < W; ++xx) {
        double v;
        bool road = false;
        if (sky) {
          v = 0.72 + 0.04 * rng.normal();
        } else {
          road = std::fabs(static_cast<double>(xx) - cx) <= half;
          v = road ? 0.30 + 0.05 * rng.normal() : 0.50 + 0.06 * rng.normal();
        }
        img[yy * W + xx] = v;
        if (road) y[static_cast<size_t>(i * H * W + yy * W + xx)] = 1;
      }
    }
  }
}

void generate(const ShiftSpec& spec, uint64_t stream_seed, int64_t n, Tensor& x,
              std::vector<int64_t>& y) {
  Rng rng(stream_seed);
  switch (spec.family) {
    case DataFamily::Gauss2d: gen_gauss2d(spec, rng, n, x, y); break;
    case DataFamily::Moons2d: gen_moons2d(spec, rng, n, x, y); break;
    case DataFamily::TextureCls: gen_texture(spec, rng, n, x, y); break;
    case DataFamily::RoadwaySeg: gen_roadway(spec, rng, n, x, y); break;
  }
}

// ---------------------------------------------------------------------------
// target-domain transforms (label-preserving appearance shifts)
// ---------------------------------------------------------------------------

constexpr double kUnitX = 0.6, kUnitY = 0.8;  // translation direction (unit norm)

void transform_points(double severity, Tensor& x, bool inverse) {
  const double ang = severity * M_PI / 2.0;
  const double co = std::cos(ang), si = std::sin(ang);
  const double tx = severity * kUnitX, ty = severity * kUnitY;
  const int64_t n = x.shape.dim(0);
  for (int64_t i = 0; i < n; ++i) {
    double& a = x[static_cast<size_t>(2 * i)];
    double& b = x[static_cast<size_t>(2 * i + 1)];
    if (!inverse) {
      const double ra = co * a - si * b + tx;
      const double rb = si * a + co * b + ty;
      a = ra;
      b = rb;
    } else {
      const double ua = a - tx, ub = b - ty;
      const double ra = co * ua + si * ub;
      const double rb = -si * ua + co * ub;
      a = ra;
      b = rb;
    }
  }
}

// Low-frequency shading: a spatially varying multiplicative gain field plus
// an additive clutter wave and channel offsets. Plain per-channel
// gain/offset shifts are almost invisible to a ReLU network (positive
// homogeneity). The additive wave masks the grating signal for a model
// trained on clean textures, but on its own it can be suppressed by a single
// high-pass conv, which makes the shallowest encoder split the best
// alignment point. The position-dependent gain is a diagonal operator no
// translation-invariant filter can invert, so removing the combined shift
// needs nonlinear depth. Both components share one fixed-phase pattern at an
// off-class orientation below the class frequency bands; the gain never
// reaches zero and the whole map is exactly invertible.
void transform_texture(double severity, Tensor& x, bool inverse) {
  const double amp_add = 1.0 * severity;
  const double amp_mul = 0.6 * severity;
  const double theta = 0.15 * M_PI;  // between the 18-degree class steps
  const double freq = 1.0;           // class bands are 2 and 4
  const double phase = 1.234;
  const double co = std::cos(theta), si = std::sin(theta);
  const double off[3] = {0.25 * severity, -0.15 * severity, 0.10 * severity};

  const int64_t H = 32, W = 32, chw = H * W;
  std::vector<double> wave(static_cast<size_t>(chw));
  for (int64_t yy = 0; yy < H; ++yy)
    for (int64_t xx = 0; xx < W; ++xx)
      wave[static_cast<size_t>(yy * W + xx)] =
          std::sin(2.0 * M_PI * freq *
                       (static_cast<double>(xx) * co + static_cast<double>(yy) * si) /
                       static_cast<double>(W) +
                   phase);

  const int64_t n = x.shape.dim(0);
  for (int64_t i = 0; i < n; ++i)
    for (int ch = 0; ch < 3; ++ch) {
      double* p = x.data() + (i * 3 + ch) * chw;
      for (int64_t j = 0; j < chw; ++j) {
        const double w = wave[static_cast<size_t>(j)];
        const double g = 1.0 + amp_mul * w;
        const double b = amp_add * w + off[ch];
        p[j] = inverse ? (p[j] - b) / g : p[j] * g + b;
      }
    }
}

// Exposure change (gain + offset) plus a fixed low-frequency shading wave.
// The wave pushes road-intensity pixels up toward ground level and vice
// versa, so a model keyed to clean absolute intensities degrades, while the
// pattern stays deterministic and exactly invertible.
void transform_roadway(double severity, Tensor& x, bool inverse) {
  const double gain = 1.0 - 0.5 * severity;
  const double off = -0.10 * severity;
  const double amp = 0.7 * severity;
  const double theta = 0.6;
  const double freq = 1.5;
  const double phase = 2.345;
  const double co = std::cos(theta), si = std::sin(theta);

  const int64_t H = 48, W = 64, hw = H * W;
  std::vector<double> wave(static_cast<size_t>(hw));
  for (int64_t yy = 0; yy < H; ++yy)
    for (int64_t xx = 0; xx < W; ++xx)
      wave[static_cast<size_t>(yy * W + xx)] =
          std::sin(2.0 * M_PI * freq *
                       (static_cast<double>(xx) * co / static_cast<double>(W) +
                        static_cast<double>(yy) * si / static_cast<double>(H)) +
                   phase);

  const int64_t n = x.shape.dim(0);
  for (int64_t i = 0; i < n; ++i) {
    double* p = x.data() + i * hw;
    for (int64_t j = 0; j < hw; ++j) {
      const double w = amp * wave[static_cast<size_t>(j)];
      p[j] = inverse ? (p[j] - off - w) / gain : gain * p[j] + off + w;
    }
  }
}

void apply_transform(const ShiftSpec& spec, Tensor& x, bool inverse) {
  switch (spec.family) {
    case DataFamily::Gauss2d:
    case DataFamily::Moons2d: transform_points(spec.severity, x, inverse); break;
    case DataFamily::TextureCls: transform_texture(spec.severity, x, inverse); break;
    case DataFamily::RoadwaySeg: transform_roadway(spec.severity, x, inverse); break;
  }
}

double mean_distance(const Tensor& a, const Tensor& b) {
  const int64_t na = a.shape.dim(0), nb = b.shape.dim(0);
  const int64_t d = a.numel() / na;
  double acc = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    double ma = 0.0, mb = 0.0;
    for (int64_t i = 0; i < na; ++i) ma += a[static_cast<size_t>(i * d + j)];
    for (int64_t i = 0; i < nb; ++i) mb += b[static_cast<size_t>(i * d + j)];
    const double diff = ma / static_cast<double>(na) - mb / static_cast<double>(nb);
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace

DomainData make_pair(const ShiftSpec& spec) {
  spec.validate();
  DomainData d;
  const std::string tag = family_name(spec.family);

  generate(spec, sub_seed(spec.seed, tag + "/src-train"), spec.n_train,
           d.source_train.inputs, d.source_train.labels);
  d.source_train.domain = "source";
  generate(spec, sub_seed(spec.seed, tag + "/src-test"), spec.n_test,
           d.source_test.inputs, d.source_test.labels);
  d.source_test.domain = "source";

  // Target draws share the source distribution (and nothing else), then get
  // the severity transform; base draws are independent of severity so that
  // raising severity changes the transform only.
  std::vector<int64_t> tgt_train_labels;
  generate(spec, sub_seed(spec.seed, tag + "/tgt-train"), spec.n_train,
           d.target_train.inputs, tgt_train_labels);
  apply_transform(spec, d.target_train.inputs, false);
  d.target_train.domain = "target";
  d.target_train_held_out_labels = std::move(tgt_train_labels);

  generate(spec, sub_seed(spec.seed, tag + "/tgt-test"), spec.n_test,
           d.target_test.inputs, d.target_test.labels);
  apply_transform(spec, d.target_test.inputs, false);
  d.target_test.domain = "target";

  d.shift_report = mean_distance(d.source_train.inputs, d.target_train.inputs);
  return d;
}

LabeledSet upper_bound_target_train(const DomainData& data) {
  LabeledSet s;
  s.inputs = data.target_train.inputs;
  s.labels = data.target_train_held_out_labels;
  s.domain = "target";
  return s;
}

Tensor inverse_transform(const ShiftSpec& spec, const Tensor& target_inputs) {
  Tensor out = target_inputs;
  apply_transform(spec, out, true);
  return out;
}

BatchIterator::BatchIterator(int64_t set_size, int64_t batch_size, uint64_t seed)
    : set_size_(set_size), batch_size_(batch_size), state_(seed) {
  if (batch_size < 1 || batch_size > set_size)
    throw std::invalid_argument("batch size " + std::to_string(batch_size) +
                                " invalid for a set of " + std::to_string(set_size));
  order_.resize(static_cast<size_t>(set_size));
  for (int64_t i = 0; i < set_size; ++i) order_[static_cast<size_t>(i)] = i;
  reshuffle();
}

void BatchIterator::reshuffle() {
  Rng rng(state_);
  state_ = rng.next_u64();  // advance the per-epoch stream deterministically
  for (int64_t i = set_size_ - 1; i > 0; --i) {
    const int64_t j = rng.uniform_int(i + 1);
    std::swap(order_[static_cast<size_t>(i)], order_[static_cast<size_t>(j)]);
  }
  cursor_ = 0;
}

const std::vector<int64_t>& BatchIterator::next() {
  if (cursor_ + batch_size_ > set_size_) reshuffle();  // drops the remainder
  batch_.assign(order_.begin() + cursor_, order_.begin() + cursor_ + batch_size_);
  cursor_ += batch_size_;
  return batch_;
}

Tensor gather_inputs(const Tensor& inputs, const std::vector<int64_t>& idx) {
  const int64_t n = inputs.shape.dim(0);
  const int64_t block = inputs.numel() / n;
  std::vector<int64_t> dims = inputs.shape.dims();
  dims[0] = static_cast<int64_t>(idx.size());
  Tensor out{Shape{dims}};
  for (size_t i = 0; i < idx.size(); ++i) {
    const int64_t s = idx[i];
    std::copy(inputs.data() + s * block, inputs.data() + (s + 1) * block,
              out.data() + static_cast<int64_t>(i) * block);
  }
  return out;
}

std::vector<int64_t> gather_labels(const std::vector<int64_t>& labels,
                                   int64_t block_size,
                                   const std::vector<int64_t>& idx) {
  std::vector<int64_t> out;
  out.reserve(idx.size() * static_cast<size_t>(block_size));
  for (int64_t s : idx)
    for (int64_t j = 0; j < block_size; ++j)
      out.push_back(labels[static_cast<size_t>(s * block_size + j)]);
  return out;
}

namespace {

void write_doubles(const std::filesystem::path& p, const Tensor& t) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double) * t.numel()));
  if (!os) throw std::runtime_error("export: write failed: " + p.string());
}

void write_labels(const std::filesystem::path& p, const std::vector<int64_t>& v) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(sizeof(int64_t) * v.size()));
  if (!os) throw std::runtime_error("export: write failed: " + p.string());
}

nlohmann::json shape_json(const Shape& s) {
  nlohmann::json a = nlohmann::json::array();
  for (int64_t d : s.dims()) a.push_back(d);
  return a;
}

}  // namespace

void export_dataset(const DomainData& data, const ShiftSpec& spec,
                    const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);

  write_doubles(root / "source_train_inputs.f64", data.source_train.inputs);
  write_labels(root / "source_train_labels.i64", data.source_train.labels);
  write_doubles(root / "source_test_inputs.f64", data.source_test.inputs);
  write_labels(root / "source_test_labels.i64", data.source_test.labels);
  write_doubles(root / "target_train_inputs.f64", data.target_train.inputs);
  write_doubles(root / "target_test_inputs.f64", data.target_test.inputs);
  write_labels(root / "target_test_labels.i64", data.target_test.labels);

  nlohmann::json m;
  m["spec"] = {{"family", family_name(spec.family)}, {"severity", spec.severity},
               {"classes", spec.classes},           {"n_train", spec.n_train},
               {"n_test", spec.n_test},             {"seed", spec.seed}};
  m["dtype"] = "float64";
  m["label_dtype"] = "int64";
  m["byte_order"] = "little";
  m["shift_report"] = data.shift_report;
  m["shapes"] = {
      {"source_train_inputs", shape_json(data.source_train.inputs.shape)},
      {"source_test_inputs", shape_json(data.source_test.inputs.shape)},
      {"target_train_inputs", shape_json(data.target_train.inputs.shape)},
      {"target_test_inputs", shape_json(data.target_test.inputs.shape)},
  };
  std::ofstream os(root / "manifest.json", std::ios::trunc);
  os << m.dump(2) << "\n";
  if (!os) throw std::runtime_error("export: cannot write manifest.json");
}

}  // namespace adaforge
