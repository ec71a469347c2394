#pragma once

// Central finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "harakat/autograd.hpp"

namespace harakat {

struct GradCheckOptions {
  double epsilon = 1e-2;
  double tolerance = 1e-2;
  /// Elements checked per input tensor; 0 checks all. Larger tensors are
  /// sampled with a fixed seed.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;

  /// f32 builds: eps 1e-2 (near the cube root of float epsilon, where
  /// truncation and rounding error balance), tol 1e-2. Widened build: eps
  /// 1e-6, tol 1e-4.
  static GradCheckOptions for_real_type();
};

struct GradCheckInput {
  std::string name;
  Var var;  // leaf with requires_grad
};

struct InputGradError {
  std::string name;
  std::size_t checked = 0;
  double rel_error = 0.0;      // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::vector<InputGradError> inputs;
};

/// f must rebuild its scalar output from the current input values on every
/// call. Inputs are restored bitwise afterwards.
GradCheckReport grad_check(const std::string& name, const std::function<Var()>& f,
                           std::vector<GradCheckInput> inputs,
                           const GradCheckOptions& opts = GradCheckOptions::for_real_type());

/// Every parameterized layer plus both full fusion forwards at toy size
/// (d = 8, T = 4, 30 mel frames).
std::vector<GradCheckReport> run_layer_grad_checks(
    const GradCheckOptions& opts = GradCheckOptions::for_real_type());

}  // namespace harakat
