#include "rfa/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "rfa/error.hpp"

namespace rfa {

namespace {

constexpr int kLemniscateTable = 4096;

}  // namespace

TakeoffTrajectory::TakeoffTrajectory(const Eigen::Vector3d& start, double height, double speed)
    : start_(start), height_(height) {
  if (!(height > 0.0) || !(speed > 0.0)) fail(ErrorKind::Config, "takeoff: height and speed must be positive");
  // Peak rate of the quintic smoothstep is 15/8 of the mean rate.
  climb_time_ = 1.875 * height / speed;
}

FlatSample TakeoffTrajectory::sample(double t) const {
  const double s = std::clamp(t / climb_time_, 0.0, 1.0);
  const double h = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
  const double dh = (t <= 0.0 || t >= climb_time_) ? 0.0 : 30.0 * s * s * (1.0 - s) * (1.0 - s) / climb_time_;
  const double ddh = (t <= 0.0 || t >= climb_time_)
                         ? 0.0
                         : 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (climb_time_ * climb_time_);
  FlatSample out;
  out.p = start_ + Eigen::Vector3d(0.0, 0.0, height_ * h);
  out.v = Eigen::Vector3d(0.0, 0.0, height_ * dh);
  out.a = Eigen::Vector3d(0.0, 0.0, height_ * ddh);
  return out;
}

LemniscateTrajectory::LemniscateTrajectory(const Eigen::Vector3d& center, const Eigen::Vector3d& size,
                                           double speed, int laps, double ramp_time)
    : center_(center), half_(0.5 * size), speed_(speed), ramp_time_(ramp_time), laps_(laps) {
  if (!(speed > 0.0) || laps < 1 || !(ramp_time >= 0.0)) {
    fail(ErrorKind::Config, "lemniscate: speed > 0, laps >= 1 and ramp_time >= 0 required");
  }
  if ((size.array() < 0.0).any() || !(size.x() > 0.0)) fail(ErrorKind::Config, "lemniscate: invalid size");
  table_s_.resize(kLemniscateTable + 1);
  table_s_[0] = 0.0;
  const double h = 2.0 * M_PI / kLemniscateTable;
  for (int i = 0; i < kLemniscateTable; ++i) {
    // Simpson on each cell.
    const double a = curve(i * h).d1.norm();
    const double m = curve((i + 0.5) * h).d1.norm();
    const double b = curve((i + 1) * h).d1.norm();
    table_s_[static_cast<std::size_t>(i + 1)] = table_s_[static_cast<std::size_t>(i)] + h * (a + 4.0 * m + b) / 6.0;
  }
  lap_length_ = table_s_.back();
  total_length_ = lap_length_ * laps_;
  duration_ = total_length_ / speed_ + ramp_time_;
}

Eigen::Vector3d LemniscateTrajectory::start_point() const { return curve(0.0).p; }

LemniscateTrajectory::Curve LemniscateTrajectory::curve(double theta) const {
  const double c = std::cos(theta), s = std::sin(theta);
  const double c2 = std::cos(2.0 * theta), s2 = std::sin(2.0 * theta);
  Curve out;
  out.p = center_ + Eigen::Vector3d(half_.x() * c, half_.y() * s2, half_.z() * s);
  out.d1 = Eigen::Vector3d(-half_.x() * s, 2.0 * half_.y() * c2, half_.z() * c);
  out.d2 = Eigen::Vector3d(-half_.x() * c, -4.0 * half_.y() * s2, -half_.z() * s);
  return out;
}

double LemniscateTrajectory::theta_of_arclength(double s) const {
  const double lap = std::floor(s / lap_length_);
  const double rem = s - lap * lap_length_;
  const auto it = std::upper_bound(table_s_.begin(), table_s_.end(), rem);
  const auto i = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - table_s_.begin() - 1, 0, kLemniscateTable - 1));
  const double h = 2.0 * M_PI / kLemniscateTable;
  const double frac = (rem - table_s_[i]) / (table_s_[i + 1] - table_s_[i]);
  double theta = (static_cast<double>(i) + frac) * h;
  // One Newton correction against the local speed.
  const double s_theta = table_s_[i] + 0.5 * (theta - static_cast<double>(i) * h) *
                                          (curve(static_cast<double>(i) * h).d1.norm() + curve(theta).d1.norm());
  theta -= (s_theta - rem) / curve(theta).d1.norm();
  return theta + lap * 2.0 * M_PI;
}

FlatSample LemniscateTrajectory::sample(double t) const {
  const double tc = std::clamp(t, 0.0, duration_);
  double s = 0.0, sd = 0.0, sdd = 0.0;
  const double tr = ramp_time_;
  if (tr > 0.0 && tc < tr) {
    s = speed_ * tc * tc / (2.0 * tr);
    sd = speed_ * tc / tr;
    sdd = t < 0.0 ? 0.0 : speed_ / tr;
  } else if (tr > 0.0 && tc > duration_ - tr) {
    const double r = duration_ - tc;
    s = total_length_ - speed_ * r * r / (2.0 * tr);
    sd = speed_ * r / tr;
    sdd = t > duration_ ? 0.0 : -speed_ / tr;
  } else {
    s = speed_ * (tc - 0.5 * tr);
    sd = speed_;
  }
  if (t <= 0.0 || t >= duration_) sd = 0.0;
  const double theta = theta_of_arclength(std::clamp(s, 0.0, total_length_));
  const Curve c = curve(theta);
  const double n = c.d1.norm();
  const double th_s = 1.0 / n;
  const double th_ss = -c.d1.dot(c.d2) / (n * n * n * n);
  FlatSample out;
  out.p = c.p;
  out.v = c.d1 * th_s * sd;
  out.a = (c.d2 * th_s * th_s + c.d1 * th_ss) * sd * sd + c.d1 * th_s * sdd;
  return out;
}

FlatSample DelayedTrajectory::sample(double t) const { return inner_->sample(t - start_); }

}  // namespace rfa
