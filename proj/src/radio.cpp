#include "rcms/radio.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace rcms {

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::Read: return "read";
    case MessageKind::Roger: return "roger";
    case MessageKind::CoopRequest: return "coop_request";
    case MessageKind::CoopAgreement: return "coop_agreement";
    case MessageKind::ReplaceRequest: return "replace_request";
    case MessageKind::RegionChangeBroadcast: return "region_change";
    case MessageKind::DataPacket: return "data";
    case MessageKind::StateUpdate: return "state_update";
    case MessageKind::CoreBeacon: return "core_beacon";
  }
  return "?";
}

double DeliveryModel::loss_probability(double distance) const {
  if (distance > comm_range) return 1.0;
  if (distance <= reliable_radius) return 0.0;
  const double x = (distance - reliable_radius) / (comm_range - reliable_radius);
  return std::pow(x, loss_exponent);
}

std::size_t DeliveryModel::size_of(MessageKind kind) const {
  return kind == MessageKind::DataPacket ? data_bytes : control_bytes;
}

double DeliveryModel::airtime(MessageKind kind) const {
  return static_cast<double>(size_of(kind)) * 8.0 / data_rate;
}

void DeliveryModel::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw Error(Errc::ConfigError, fmt::format("{}: {}", field, rule));
  };
  require(comm_range > 0.0, "comm_range", "must be > 0");
  require(reliable_radius >= 0.0 && reliable_radius < comm_range, "reliable_radius", "must be in [0, comm_range)");
  require(loss_exponent > 0.0, "loss_exponent", "must be > 0");
  require(base_delay >= 0.0, "base_delay", "must be >= 0");
  require(data_rate > 0.0, "data_rate", "must be > 0");
  require(control_bytes > 0, "control_bytes", "must be > 0");
  require(data_bytes > 0, "data_bytes", "must be > 0");
  require(max_queue_delay >= 0.0, "max_queue_delay", "must be >= 0");
}

std::vector<VehicleId> neighbors(std::span<const Vec2> positions, VehicleId id, double range) {
  if (id >= positions.size()) throw Error(Errc::UnknownVehicle, fmt::format("vehicle {} does not exist", id));
  std::vector<VehicleId> out;
  const Vec2 p = positions[id];
  for (VehicleId other = 0; other < positions.size(); ++other)
    if (other != id && (positions[other] - p).norm() <= range) out.push_back(other);
  return out;
}

Radio::Radio(DeliveryModel model) : model_(std::move(model)), rng_(model_.rng_seed) { model_.validate(); }

double Radio::busy_until(VehicleId sender) const {
  return sender < busy_until_.size() ? busy_until_[sender] : 0.0;
}

void Radio::reserve(VehicleId sender, double until) {
  if (sender >= busy_until_.size()) busy_until_.resize(sender + 1, 0.0);
  busy_until_[sender] = std::max(busy_until_[sender], until);
}

bool Radio::lost(double distance) {
  const double p = model_.loss_probability(distance);
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p;
}

std::vector<ScheduledDelivery> Radio::send(std::span<const Vec2> positions, const Message& msg) {
  if (msg.sender >= positions.size())
    throw Error(Errc::UnknownVehicle, fmt::format("sender {} does not exist", msg.sender));
  if (!msg.is_broadcast() && msg.receiver >= positions.size())
    throw Error(Errc::UnknownVehicle, fmt::format("receiver {} does not exist", msg.receiver));

  const double start = std::max(msg.sent_at, busy_until(msg.sender));
  if (start - msg.sent_at > model_.max_queue_delay) {
    ++frames_dropped_queue_;
    return {};
  }
  const double air = model_.airtime(msg.kind);
  reserve(msg.sender, start + air);
  ++frames_sent_;
  const double arrival = start + air + model_.base_delay;

  std::vector<ScheduledDelivery> out;
  const Vec2 from = positions[msg.sender];
  auto consider = [&](VehicleId r) {
    const double d = (positions[r] - from).norm();
    if (d > model_.comm_range || lost(d)) return;
    out.push_back({arrival, r, msg});
  };
  if (msg.is_broadcast()) {
    for (VehicleId r = 0; r < positions.size(); ++r)
      if (r != msg.sender) consider(r);
  } else if (msg.receiver != msg.sender) {
    consider(msg.receiver);
  }
  return out;
}

std::optional<ScheduledDelivery> Radio::send_acknowledged(std::span<const Vec2> positions, const Message& msg,
                                                          int retries) {
  if (msg.sender >= positions.size() || msg.receiver >= positions.size())
    throw Error(Errc::UnknownVehicle, fmt::format("unicast {} -> {} names a missing vehicle", msg.sender, msg.receiver));
  double start = std::max(msg.sent_at, busy_until(msg.sender));
  if (start - msg.sent_at > model_.max_queue_delay) {
    ++frames_dropped_queue_;
    return std::nullopt;
  }
  const double air = model_.airtime(msg.kind);
  const double d = (positions[msg.receiver] - positions[msg.sender]).norm();
  for (int attempt = 0; attempt <= retries; ++attempt) {
    ++frames_sent_;
    if (!lost(d)) {
      reserve(msg.sender, start + air);
      return ScheduledDelivery{start + air + model_.base_delay, msg.receiver, msg};
    }
    start += air + model_.base_delay;  // wait out the missing acknowledgement
  }
  reserve(msg.sender, start);
  return std::nullopt;
}

}  // namespace rcms
