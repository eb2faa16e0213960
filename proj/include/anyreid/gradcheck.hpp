#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anyreid/repr.hpp"

namespace anyreid {

inline constexpr std::array<std::string_view, 5> kGradcheckSuites = {"rol", "kdl", "triplet", "ce",
                                                                     "end_to_end"};

inline constexpr double kLossGradTolerance = 1e-4;
inline constexpr double kEndToEndGradTolerance = 1e-3;

struct SuiteResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;  // extra failure context, empty on success
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  // Test hook: perturbs the analytic gradient of the named suite so it must fail.
  std::string corrupt;
};

// ||a - f|| / max(||a||, ||f||, 1e-12).
double relative_error(const Vector& analytic, const Vector& numeric);

// Central differences of f over every coordinate of x (x is restored afterwards).
Vector numeric_gradient(const std::function<double()>& f, std::span<double* const> coords,
                        double step);

// Runs every suite in kGradcheckSuites order. Throws Error on an unknown corrupt name.
std::vector<SuiteResult> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace anyreid
