#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "penrecon/admm.hpp"
#include "penrecon/dsm.hpp"
#include "penrecon/phantom.hpp"
#include "penrecon/slab.hpp"

namespace pen {

/// Configuration problems (schema violations, unknown keys, bad values).
/// CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Data problems (missing/mismatched files, path collisions). CLI exit
/// code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Single-document pipeline configuration; strict schema (unknown keys are
/// rejected). All relative paths resolve against out_dir.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = ".";

  PhantomSpec phantom;
  int n_slab = 8;
  ProfileSpec profile;

  struct Simulate {
    double noise_sigma = 0.0;
    std::vector<int> dropped_slabs;
    bool self_check = false;
    struct Dwi {
      bool enabled = false;
      double b_value = 1000.0;
      int n_directions = 10;
      bool include_b0 = true;
      double noise_sigma = 0.0;
    } dwi;
  } simulate;

  struct Train {
    nn::DrunetArch arch;  // defaults to channels {16, 32, 64}
    double sigma_min = 0.0;
    double sigma_max = 0.1;
    int batch = 4;
    int steps = 500;
    double learning_rate = 0.02;
    int patch_size = 24;
    int num_phantoms = 6;
    std::string model_out = "model.emdl";
  } train;

  struct Reconstruct {
    std::string method = "lsq";  // lsq | tv | muse
    double lambda = -1.0;        // < 0: per-method default (tv 0.05, muse 0.5)
    double beta = 1.0;
    int outer_iters = 20;
    int sd_steps = 5;
    double sd_step_size = 0.0;
    double tol = 1e-5;
    int tv_inner_iters = 30;
    std::string model = "model.emdl";
    std::string measurements = "meas.svol";
    std::string profiles = "profiles.svol";
    std::string output;  // default recon_<method>.svol
    bool png = true;
  } reconstruct;

  struct Evaluate {
    std::string reference = "phantom.svol";
    std::vector<std::pair<std::string, std::string>> inputs;  // label -> path
    std::string metrics_out = "metrics.csv";
    struct Dti {
      bool enabled = false;
      std::string protocol = "protocol.json";
      std::vector<std::pair<std::string, std::vector<std::string>>> dwi_sets;
      std::string tensor_truth;  // optional
      double mask_threshold = 0.05;
    } dti;
  } evaluate;
};

RunConfig load_run_config(const std::string& path);

struct CliOptions {
  std::string out_dir;  // override when nonempty
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string method;  // override when nonempty
  bool force = false;
};

void cmd_simulate(const RunConfig& cfg, const CliOptions& opt);
void cmd_train(const RunConfig& cfg, const CliOptions& opt);
void cmd_reconstruct(const RunConfig& cfg, const CliOptions& opt);
void cmd_evaluate(const RunConfig& cfg, const CliOptions& opt);

}  // namespace pen
