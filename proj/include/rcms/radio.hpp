#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "rcms/core_types.hpp"

namespace rcms {

inline constexpr VehicleId kBroadcast = std::numeric_limits<VehicleId>::max();
inline constexpr RegionId kNoRegion = std::numeric_limits<RegionId>::max();

enum class MessageKind {
  Read,
  Roger,
  CoopRequest,
  CoopAgreement,
  ReplaceRequest,
  RegionChangeBroadcast,
  DataPacket,
  StateUpdate,  // member -> core: periodic state, or notice of leaving
  CoreBeacon,   // core -> one hop: liveness, position and next turn
};

std::string_view to_string(MessageKind kind);

/// One-hop frame. Payload fields are shared across kinds; each kind reads the
/// subset it needs.
struct Message {
  MessageKind kind = MessageKind::Read;
  VehicleId sender = 0;
  VehicleId receiver = kBroadcast;
  double sent_at = 0.0;

  VehicleState state;                 // sender snapshot
  std::vector<VehicleState> history;  // recent trajectory of the sender (Read, Roger)
  RegionId region_id = kNoRegion;
  VehicleId core_id = kBroadcast;     // Roger: the replying core; RegionChange: the new core
  bool two_way = false;               // Roger: reply open to both headings (congestion)
  bool leaving = false;               // StateUpdate: member departs
  bool dissolve = false;              // RegionChange: region ends
  Vec2 next_heading;                  // CoreBeacon
  IntersectionId intersection = kNoIntersection;  // CoreBeacon: next intersection of the core
  std::size_t roster_size = 0;        // CoreBeacon
  std::vector<VehicleId> members;     // RegionChange: resulting membership

  std::uint64_t packet_id = 0;        // DataPacket
  VehicleId source = 0;
  VehicleId destination = 0;
  double created_at = 0.0;
  int hops = 0;

  bool is_broadcast() const { return receiver == kBroadcast; }
};

/// Distance-parametric link model standing in for the physical layer.
struct DeliveryModel {
  double comm_range = 250.0;      // m; nothing is received beyond it
  double reliable_radius = 150.0; // m; no loss inside it
  double loss_exponent = 2.0;     // shape of the rise between the two radii
  double base_delay = 0.005;      // s per hop
  double data_rate = 6e6;         // bit/s
  std::size_t control_bytes = 200;
  std::size_t data_bytes = 1000;
  double max_queue_delay = 0.05;  // s of backlog a transmitter accepts before dropping
  std::uint64_t rng_seed = 1;

  /// 0 up to reliable_radius, ((d - r0) / (R - r0))^k up to comm_range, 1 beyond.
  double loss_probability(double distance) const;
  std::size_t size_of(MessageKind kind) const;
  double airtime(MessageKind kind) const;
  void validate() const;
};

/// Vehicles within `range` (inclusive) of `id`, ascending, excluding `id`.
/// Throws UnknownVehicle when `id` is out of bounds.
std::vector<VehicleId> neighbors(std::span<const Vec2> positions, VehicleId id, double range);

struct ScheduledDelivery {
  double at = 0.0;
  VehicleId receiver = 0;
  Message message;
};

/// Transmission scheduling with per-sender FIFO serialisation and seeded loss.
class Radio {
 public:
  explicit Radio(DeliveryModel model);

  const DeliveryModel& model() const { return model_; }

  /// Queues `msg` at its sender and returns the receptions it produces. A
  /// transmission starts when the sender's earlier frames have left the air;
  /// each in-range recipient then gets it at start + airtime + base_delay
  /// unless the loss draw drops it. Unicast to an out-of-range receiver and
  /// frames hitting a full queue vanish silently.
  std::vector<ScheduledDelivery> send(std::span<const Vec2> positions, const Message& msg);

  /// Unicast with link-layer acknowledgements: up to `retries` further
  /// attempts after a loss, each after an ACK timeout of base_delay. Returns
  /// the reception if one attempt gets through.
  std::optional<ScheduledDelivery> send_acknowledged(std::span<const Vec2> positions, const Message& msg,
                                                     int retries);

  /// Time at which `sender` could start a new transmission.
  double busy_until(VehicleId sender) const;
  void reserve(VehicleId sender, double until);

  std::uint64_t frames_sent() const { return frames_sent_; }
  std::uint64_t frames_dropped_queue() const { return frames_dropped_queue_; }

 private:
  bool lost(double distance);

  DeliveryModel model_;
  std::mt19937_64 rng_;
  std::vector<double> busy_until_;
  std::uint64_t frames_sent_ = 0;
  std::uint64_t frames_dropped_queue_ = 0;
};

}  // namespace rcms
