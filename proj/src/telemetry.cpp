#include "geofence/telemetry.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace geofence {

void TelemetryLog::append(const TelemetryRow& row) {
  if (!rows_.empty() && !(row.t > rows_.back().t)) {
    throw std::logic_error(fmt::format("telemetry time must increase ({} after {})", row.t, rows_.back().t));
  }
  rows_.push_back(row);
}

void write_csv_row(std::ostream& out, const TelemetryRow& r) {
  std::string line = fmt::format("{:.6f}", r.t);
  for (int i = 0; i < QuadState::kDim; ++i) line += fmt::format(",{:.17g}", r.state[i]);
  for (const QuadCommand* u : {&r.u_des, &r.u_cmd}) {
    line += fmt::format(",{:.17g},{:.17g},{:.17g},{:.17g}", u->throttle, u->body_rates.x(), u->body_rates.y(),
                        u->body_rates.z());
  }
  line += fmt::format(",{:.17g},{:.17g},{:.17g}\n", r.h_I, r.lambda, r.v_perp);
  out << line;
}

void TelemetryLog::write_csv(std::ostream& out) const {
  out << kCsvHeader << '\n';
  for (const auto& row : rows_) write_csv_row(out, row);
}

}  // namespace geofence
