#pragma once

#include <ostream>
#include <string_view>
#include <vector>

#include "geofence/vehicle_models.hpp"

namespace geofence {

/// One control tick of a quadrotor run.
struct TelemetryRow {
  double t = 0.0;
  QuadState::Vector state = QuadState::Vector::Zero();
  QuadCommand u_des;
  QuadCommand u_cmd;
  double h_I = 0.0;
  double lambda = 0.0;
  double v_perp = 0.0;
};

/// Append-only per-tick log with strictly increasing time stamps.
class TelemetryLog {
 public:
  /// Fixed CSV column order.
  static constexpr std::string_view kCsvHeader =
      "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,throttle_des,wdx_des,wdy_des,wdz_des,"
      "throttle_cmd,wx_cmd,wy_cmd,wz_cmd,hI,lambda,vperp";

  void reserve(std::size_t n) { rows_.reserve(n); }
  /// Throws std::logic_error if t does not increase.
  void append(const TelemetryRow& row);

  const std::vector<TelemetryRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const TelemetryRow& back() const { return rows_.back(); }

  void write_csv(std::ostream& out) const;

 private:
  std::vector<TelemetryRow> rows_;
};

void write_csv_row(std::ostream& out, const TelemetryRow& row);

}  // namespace geofence
