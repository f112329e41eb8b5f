#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace l96 {

/// Row-major dense matrix. Rows index time or batch elements, columns index sites.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// Invalid configuration or mismatched dimensions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A time integration produced a non-finite or runaway state.
class BlowupError : public std::runtime_error {
 public:
  BlowupError(const std::string& what, std::size_t step_index, double time)
      : std::runtime_error(what), step_index_(step_index), time_(time) {}

  std::size_t step_index() const { return step_index_; }
  double time() const { return time_; }

 private:
  std::size_t step_index_;
  double time_;
};

/// Non-finite value or gradient during reverse-mode differentiation.
class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training aborted because the loss stayed above the divergence threshold.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Magnitude above which a slow variable is treated as blown up.
inline constexpr double kBlowupMagnitude = 1e6;

inline bool state_ok(const Eigen::Ref<const Mat>& m) {
  return m.allFinite() && (m.size() == 0 || m.cwiseAbs().maxCoeff() <= kBlowupMagnitude);
}

}  // namespace l96
