#include "penrecon/energy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace pen {

void EnergyModel::validate() const {
  arch.validate();
  if (params.size() != nn::drunet_param_count(arch))
    throw std::invalid_argument("EnergyModel: parameter count inconsistent with arch");
  for (double p : params)
    if (!std::isfinite(p)) throw std::invalid_argument("EnergyModel: non-finite parameter");
  if (!(sigma_max >= 0.0 && sigma_max <= 1.0))
    throw std::invalid_argument("EnergyModel: sigma_max outside [0, 1]");
}

EnergyModel make_energy_model(const nn::DrunetArch& arch, std::uint64_t seed) {
  EnergyModel m;
  m.arch = arch;
  m.params = nn::init_params(arch, seed);
  return m;
}

EnergyModel zero_energy_model(const nn::DrunetArch& arch) {
  EnergyModel m;
  m.arch = arch;
  m.params.assign(nn::drunet_param_count(arch), 0.0);
  return m;
}

namespace {

struct PadMap {
  int h = 0, w = 0;    // original
  int hp = 0, wp = 0;  // padded
  std::vector<int> rows, cols;  // padded index -> source index (reflect)

  bool trivial() const { return h == hp && w == wp; }
};

PadMap make_pad_map(int h, int w, int divisor) {
  PadMap p;
  p.h = h;
  p.w = w;
  p.hp = (h + divisor - 1) / divisor * divisor;
  p.wp = (w + divisor - 1) / divisor * divisor;
  p.rows.resize(p.hp);
  p.cols.resize(p.wp);
  for (int i = 0; i < p.hp; ++i)
    p.rows[i] = i < h ? i : std::clamp(2 * h - 2 - i, 0, h - 1);
  for (int j = 0; j < p.wp; ++j)
    p.cols[j] = j < w ? j : std::clamp(2 * w - 2 - j, 0, w - 1);
  return p;
}

// Batched evaluation context shared by the slice and volume entry points.
// Channel 0 carries the real plane, channel 1 the imaginary plane.
struct BatchEval {
  nn::Tape tape;
  nn::Workspace ws;
  std::vector<nn::Tensor> vals, adj;
};

// Packs normalized slices (s / alpha) into a padded batch tensor.
nn::Tensor pack_batch(const std::vector<const Slice2C*>& slices,
                      const std::vector<double>& alphas, const PadMap& pm) {
  nn::Tensor x(int(slices.size()), 2, pm.hp, pm.wp);
  for (int b = 0; b < x.n; ++b) {
    const Slice2C& s = *slices[b];
    const double inv = 1.0 / alphas[b];
    double* re = x.at(0, b);
    double* im = x.at(1, b);
    for (int i = 0; i < pm.hp; ++i) {
      const int sr = pm.rows[i];
      for (int j = 0; j < pm.wp; ++j) {
        const int sc = pm.cols[j];
        re[std::size_t(i) * pm.wp + j] = inv * s.re[std::size_t(sr) * pm.w + sc];
        im[std::size_t(i) * pm.wp + j] = inv * s.im[std::size_t(sr) * pm.w + sc];
      }
    }
  }
  return x;
}

struct SliceEnergy {
  double e_u = 0.0;          // energy of the normalized slice
  Slice2C grad_u;            // gradient wrt the normalized slice (if requested)
};

// Evaluates E(u) = 1/2 || u - crop(psi(pad(u))) ||^2 for a batch of
// normalized slices, optionally with exact gradients wrt u.
void eval_batch(BatchEval& be, const EnergyModel& model,
                const std::vector<const Slice2C*>& slices,
                const std::vector<double>& alphas, const PadMap& pm, bool want_grad,
                std::vector<SliceEnergy>& out) {
  const nn::Tensor x = pack_batch(slices, alphas, pm);
  nn::tape_forward(be.tape, model.params, x, be.vals, be.ws);
  const nn::Tensor& psi = be.vals[be.tape.output_id];

  const int B = x.n;
  out.assign(B, SliceEnergy());

  // Residual on the cropped (original) region.
  nn::Tensor cot(B, 2, pm.hp, pm.wp);
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int ch = 0; ch < 2; ++ch) {
      const double* xs = x.at(ch, b);
      const double* ps = psi.at(ch, b);
      double* cs = cot.at(ch, b);
      for (int i = 0; i < pm.h; ++i)
        for (int j = 0; j < pm.w; ++j) {
          const std::size_t idx = std::size_t(i) * pm.wp + j;
          const double r = xs[idx] - ps[idx];
          cs[idx] = r;
          acc += r * r;
        }
    }
    out[b].e_u = 0.5 * acc;
  }
  if (!want_grad) return;

  nn::tape_vjp(be.tape, model.params, be.vals, be.vals, cot, be.adj, {}, 0.0, be.ws);
  const nn::Tensor& gin = be.adj[be.tape.input_id];

  for (int b = 0; b < B; ++b) {
    Slice2C g(pm.h, pm.w);
    // grad = r - pad^T(J_psi^T crop^T r); fold padded rows/cols back onto
    // their reflect sources.
    for (int ch = 0; ch < 2; ++ch) {
      const double* gi = gin.at(ch, b);
      const double* cs = cot.at(ch, b);
      std::vector<double>& dst = ch == 0 ? g.re : g.im;
      for (int i = 0; i < pm.hp; ++i) {
        const int sr = pm.rows[i];
        for (int j = 0; j < pm.wp; ++j) {
          const int sc = pm.cols[j];
          dst[std::size_t(sr) * pm.w + sc] -= gi[std::size_t(i) * pm.wp + j];
        }
      }
      for (int i = 0; i < pm.h; ++i)
        for (int j = 0; j < pm.w; ++j)
          dst[std::size_t(i) * pm.w + j] += cs[std::size_t(i) * pm.wp + j];
    }
    out[b].grad_u = std::move(g);
  }
}

// Applies the normalization chain rule:
//   E~(s) = a^2 E(u), u = s / a, a = max |s|
//   grad E~ = a grad E(u) + a (2 E(u) - <u, grad E(u)>) grad a
// where grad a is supported on the argmax pixel.
Slice2C denormalize_score(const Slice2C& s, double alpha, const SliceEnergy& se) {
  Slice2C out(s.h, s.w);
  double udot = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.re[i] = alpha * se.grad_u.re[i];
    out.im[i] = alpha * se.grad_u.im[i];
    udot += (s.re[i] / alpha) * se.grad_u.re[i] + (s.im[i] / alpha) * se.grad_u.im[i];
  }
  // argmax pixel (first in scan order)
  std::size_t pmax = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double m = s.re[i] * s.re[i] + s.im[i] * s.im[i];
    if (m > best) {
      best = m;
      pmax = i;
    }
  }
  const double mag = std::sqrt(best);
  if (mag > 0.0) {
    const double bracket = alpha * (2.0 * se.e_u - udot);
    out.re[pmax] += bracket * (s.re[pmax] / mag);
    out.im[pmax] += bracket * (s.im[pmax] / mag);
  }
  return out;
}

constexpr int kBatch = 8;

}  // namespace

Slice2C psi_forward(const Slice2C& s, const EnergyModel& model) {
  model.validate();
  const int d = model.arch.divisor();
  if (s.h % d != 0 || s.w % d != 0)
    throw std::invalid_argument("psi_forward: slice shape not divisible by " + std::to_string(d));

  BatchEval be;
  be.tape = nn::build_drunet_tape(model.arch);
  nn::Tensor x(1, 2, s.h, s.w);
  std::memcpy(x.at(0, 0), s.re.data(), s.size() * sizeof(double));
  std::memcpy(x.at(1, 0), s.im.data(), s.size() * sizeof(double));
  nn::tape_forward(be.tape, model.params, x, be.vals, be.ws);
  const nn::Tensor& y = be.vals[be.tape.output_id];
  Slice2C out(s.h, s.w);
  std::memcpy(out.re.data(), y.at(0, 0), s.size() * sizeof(double));
  std::memcpy(out.im.data(), y.at(1, 0), s.size() * sizeof(double));
  return out;
}

double energy_slice_raw(const Slice2C& s, const EnergyModel& model) {
  const Slice2C p = psi_forward(s, model);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double dr = s.re[i] - p.re[i];
    const double di = s.im[i] - p.im[i];
    acc += dr * dr + di * di;
  }
  return 0.5 * acc;
}

Slice2C score_slice_raw(const Slice2C& s, const EnergyModel& model) {
  model.validate();
  const int d = model.arch.divisor();
  if (s.h % d != 0 || s.w % d != 0)
    throw std::invalid_argument("score_slice_raw: slice shape not divisible by " +
                                std::to_string(d));
  BatchEval be;
  be.tape = nn::build_drunet_tape(model.arch);
  const PadMap pm = make_pad_map(s.h, s.w, d);  // trivial
  std::vector<const Slice2C*> ptr{&s};
  std::vector<double> one{1.0};
  std::vector<SliceEnergy> res;
  eval_batch(be, model, ptr, one, pm, true, res);
  return res[0].grad_u;
}

double energy_slice(const Slice2C& s, const EnergyModel& model) {
  model.validate();
  const double alpha = slice_max_magnitude(s);
  if (alpha <= 0.0) return 0.0;
  BatchEval be;
  be.tape = nn::build_drunet_tape(model.arch);
  const PadMap pm = make_pad_map(s.h, s.w, model.arch.divisor());
  std::vector<const Slice2C*> ptr{&s};
  std::vector<double> a{alpha};
  std::vector<SliceEnergy> res;
  eval_batch(be, model, ptr, a, pm, false, res);
  return alpha * alpha * res[0].e_u;
}

Slice2C score_slice(const Slice2C& s, const EnergyModel& model) {
  model.validate();
  const double alpha = slice_max_magnitude(s);
  if (alpha <= 0.0) return Slice2C(s.h, s.w);
  BatchEval be;
  be.tape = nn::build_drunet_tape(model.arch);
  const PadMap pm = make_pad_map(s.h, s.w, model.arch.divisor());
  std::vector<const Slice2C*> ptr{&s};
  std::vector<double> a{alpha};
  std::vector<SliceEnergy> res;
  eval_batch(be, model, ptr, a, pm, true, res);
  return denormalize_score(s, alpha, res[0]);
}

namespace {

// Shared driver over one axis: batches slices, returns per-axis energy and
// (optionally) scatters scores into `score_acc`.
double axis_pass(const Volume& v, Axis axis, const EnergyModel& model, BatchEval& be,
                 bool want_grad, Volume* score_acc) {
  const std::vector<Slice2C> slices = extract_slices(v, axis);
  if (slices.empty()) return 0.0;
  const PadMap pm = make_pad_map(slices[0].h, slices[0].w, model.arch.divisor());

  double axis_energy = 0.0;
  std::vector<const Slice2C*> batch;
  std::vector<double> alphas;
  std::vector<int> indices;
  std::vector<SliceEnergy> res;

  auto flush = [&]() {
    if (batch.empty()) return;
    eval_batch(be, model, batch, alphas, pm, want_grad, res);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      axis_energy += alphas[b] * alphas[b] * res[b].e_u;
      if (want_grad) {
        const Slice2C sc = denormalize_score(*batch[b], alphas[b], res[b]);
        accumulate_slice(*score_acc, axis, indices[b], sc);
      }
    }
    batch.clear();
    alphas.clear();
    indices.clear();
  };

  for (int i = 0; i < int(slices.size()); ++i) {
    const double alpha = slice_max_magnitude(slices[i]);
    if (alpha <= 0.0) continue;  // zero slice: zero energy and zero score
    batch.push_back(&slices[i]);
    alphas.push_back(alpha);
    indices.push_back(i);
    if (int(batch.size()) == kBatch) flush();
  }
  flush();
  return axis_energy;
}

}  // namespace

std::array<double, 3> energy_volume_parts(const Volume& v, const EnergyModel& model) {
  model.validate();
  BatchEval be;
  be.tape = nn::build_drunet_tape(model.arch);
  std::array<double, 3> parts{};
  parts[0] = axis_pass(v, Axis::X, model, be, false, nullptr);
  parts[1] = axis_pass(v, Axis::Y, model, be, false, nullptr);
  parts[2] = axis_pass(v, Axis::Z, model, be, false, nullptr);
  return parts;
}

double energy_volume(const Volume& v, const EnergyModel& model) {
  const auto parts = energy_volume_parts(v, model);
  return (parts[0] + parts[1] + parts[2]) / 3.0;
}

Volume score_volume(const Volume& v, const EnergyModel& model) {
  model.validate();
  BatchEval be;
  be.tape = nn::build_drunet_tape(model.arch);
  Volume acc(v.shape(), v.voxel_size());
  axis_pass(v, Axis::X, model, be, true, &acc);
  axis_pass(v, Axis::Y, model, be, true, &acc);
  axis_pass(v, Axis::Z, model, be, true, &acc);
  return scaled(acc, 1.0 / 3.0);
}

// ---- .emdl I/O ----

void save_energy_model(const EnergyModel& model, const std::string& path) {
  model.validate();
  nlohmann::ordered_json j;
  j["arch"]["channels"] = model.arch.channels;
  j["arch"]["blocks_per_scale"] = model.arch.blocks_per_scale;
  j["arch"]["kernel"] = model.arch.kernel;
  j["sigma_max"] = model.sigma_max;
  j["param_count"] = model.params.size();
  const std::string header = j.dump();

  std::vector<char> payload(model.params.size() * 4);
  char* p = payload.data();
  for (double d : model.params) {
    const float f = float(d);
    std::memcpy(p, &f, 4);
    p += 4;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_energy_model: cannot open " + path);
  f.write(header.data(), std::streamsize(header.size()));
  f.put('\n');
  f.write(payload.data(), std::streamsize(payload.size()));
  if (!f) throw std::runtime_error("save_energy_model: I/O failure writing " + path);
}

EnergyModel load_energy_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_energy_model: cannot open " + path);
  std::string header;
  if (!std::getline(f, header))
    throw std::runtime_error("load_energy_model: missing header in " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(header);
  } catch (const std::exception& e) {
    throw std::runtime_error("load_energy_model: malformed header in " + path + ": " +
                             e.what());
  }
  EnergyModel m;
  m.arch.channels = j.at("arch").at("channels").get<std::vector<int>>();
  m.arch.blocks_per_scale = j.at("arch").at("blocks_per_scale").get<int>();
  m.arch.kernel = j.at("arch").at("kernel").get<int>();
  m.sigma_max = j.at("sigma_max").get<double>();
  const std::size_t n = j.at("param_count").get<std::size_t>();
  if (n != nn::drunet_param_count(m.arch))
    throw std::runtime_error("load_energy_model: param_count inconsistent with arch in " +
                             path);
  std::vector<char> payload(n * 4);
  f.read(payload.data(), std::streamsize(payload.size()));
  if (std::size_t(f.gcount()) != payload.size())
    throw std::runtime_error("load_energy_model: payload size mismatch in " + path);
  m.params.resize(n);
  const char* p = payload.data();
  for (std::size_t i = 0; i < n; ++i) {
    float v;
    std::memcpy(&v, p, 4);
    p += 4;
    m.params[i] = double(v);
  }
  m.validate();
  return m;
}

}  // namespace pen
