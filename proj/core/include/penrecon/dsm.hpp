#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "penrecon/energy.hpp"
#include "penrecon/volume.hpp"

namespace pen {

struct DsmConfig {
  double sigma_min = 0.0;
  double sigma_max = 0.1;
  int batch = 4;
  int steps = 500;
  double learning_rate = 0.02;
  int patch_size = 24;
  std::uint64_t seed = 0;
  nn::DrunetArch arch;
  double clip_norm = 1.0;

  void validate() const;
};

struct DsmResult {
  EnergyModel model;
  std::vector<double> loss_per_step;  // batch-mean loss before each update
  double running_loss = 0.0;          // mean over the last up-to-50 steps
};

/// Denoising score matching: minimizes
///   E_{x, sigma~U(min,max), n~N(0,I)} || sigma * grad E_theta(x + sigma n) - n ||^2
/// by plain stochastic gradient steps on random patches, with gradient-norm
/// clipping. Training is single-threaded and bit-reproducible per seed.
/// Clean slices are normalized to unit max magnitude before patch sampling.
DsmResult train_dsm(const std::vector<Slice2C>& clean_slices, const DsmConfig& cfg);

/// Batch-mean DSM loss
///   (1/B) sum_b || sigma_b * grad E(x_b + sigma_b n_b) - n_b ||^2
/// and, when grad is nonempty, its exact parameter gradient (grad is
/// overwritten). noisy holds x + sigma n; noise holds n. Exposed so tests
/// can check the analytic gradient against finite differences.
double dsm_loss_grad(const nn::Tape& tape, std::span<const double> params,
                     const nn::Tensor& noisy, const nn::Tensor& noise,
                     std::span<const double> sigmas, std::span<double> grad,
                     nn::Workspace& ws);

}  // namespace pen
