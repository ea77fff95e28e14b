#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scd/model.hpp"

namespace scd {

struct GradcheckConfig {
  ModelConfig model;  // defaults to the tiny configuration below
  std::size_t length = 5;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;

  GradcheckConfig();
};

struct ArrayCheck {
  std::string name;
  std::size_t count = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|), 2-norms
  bool pass = false;
};

struct GradcheckReport {
  std::vector<ArrayCheck> arrays;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

// Test hook applied to the analytic gradients before comparison.
using GradientHook = std::function<void(Model&, Gradients&)>;

// Central differences of the teacher-forced sequence loss (dropout off) for
// every scalar of every parameter array, compared with reverse mode.
GradcheckReport run_gradcheck(const GradcheckConfig& config, const GradientHook& sabotage = {});

}  // namespace scd
