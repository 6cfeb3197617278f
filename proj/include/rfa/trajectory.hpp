#pragma once

#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace rfa {

/// Position and its first two derivatives at one instant, world frame.
struct FlatSample {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
};

/// Time-parameterized position reference. Sampling beyond either end clamps
/// to the terminal state at rest-consistent derivatives.
class FlatTrajectory {
 public:
  virtual ~FlatTrajectory() = default;
  virtual double duration() const = 0;
  virtual FlatSample sample(double t) const = 0;
};

class HoverTrajectory final : public FlatTrajectory {
 public:
  explicit HoverTrajectory(const Eigen::Vector3d& position,
                           double duration = std::numeric_limits<double>::infinity())
      : position_(position), duration_(duration) {}
  double duration() const override { return duration_; }
  FlatSample sample(double) const override { return FlatSample{position_, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()}; }

 private:
  Eigen::Vector3d position_;
  double duration_;
};

/// Vertical climb with a quintic smoothstep profile whose peak speed is `speed`.
class TakeoffTrajectory final : public FlatTrajectory {
 public:
  TakeoffTrajectory(const Eigen::Vector3d& start, double height = 1.0, double speed = 1.0);
  double duration() const override { return climb_time_; }
  FlatSample sample(double t) const override;

 private:
  Eigen::Vector3d start_;
  double height_;
  double climb_time_;
};

/// Gerono figure-eight fitted to a box of size (x, y, z) around `center`,
/// flown at constant path speed after a linear speed ramp.
class LemniscateTrajectory final : public FlatTrajectory {
 public:
  LemniscateTrajectory(const Eigen::Vector3d& center, const Eigen::Vector3d& size, double speed,
                       int laps = 1, double ramp_time = 2.0);
  double duration() const override { return duration_; }
  FlatSample sample(double t) const override;
  double lap_length() const { return lap_length_; }
  /// Point where the figure starts (and ends).
  Eigen::Vector3d start_point() const;

 private:
  struct Curve {
    Eigen::Vector3d p, d1, d2;
  };
  Curve curve(double theta) const;
  double theta_of_arclength(double s) const;

  Eigen::Vector3d center_;
  Eigen::Vector3d half_;
  double speed_;
  double ramp_time_;
  double lap_length_ = 0.0;
  double total_length_ = 0.0;
  double duration_ = 0.0;
  int laps_;
  std::vector<double> table_s_;  // arc length at uniform theta samples of one lap
};

/// Shifts another trajectory in time: sample(t) = inner(t - start), holding
/// the initial state before `start`.
class DelayedTrajectory final : public FlatTrajectory {
 public:
  DelayedTrajectory(std::shared_ptr<const FlatTrajectory> inner, double start)
      : inner_(std::move(inner)), start_(start) {}
  double duration() const override { return start_ + inner_->duration(); }
  FlatSample sample(double t) const override;

 private:
  std::shared_ptr<const FlatTrajectory> inner_;
  double start_;
};

}  // namespace rfa
