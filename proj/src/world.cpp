#include <algorithm>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "rcms/engine.hpp"
#include "rcms/keyvalue.hpp"

namespace rcms {

bool EventQueue::Later::operator()(const SimEvent& a, const SimEvent& b) const {
  return std::tuple(a.time, static_cast<int>(a.type), a.vehicle, a.seq) >
         std::tuple(b.time, static_cast<int>(b.type), b.vehicle, b.seq);
}

void EventQueue::push(SimEvent event) {
  event.seq = next_seq_++;
  heap_.push(std::move(event));
}

const SimEvent& EventQueue::top() const {
  if (heap_.empty()) throw Error(Errc::InvalidArgument, "event queue is empty");
  return heap_.top();
}

SimEvent EventQueue::pop() {
  SimEvent e = top();
  heap_.pop();
  return e;
}

World::World(WorldConfig config, std::unique_ptr<MobilityModel> mobility, std::unique_ptr<Scheme> scheme,
             std::shared_ptr<const RoadNetwork> network)
    : config_(config),
      mobility_(std::move(mobility)),
      scheme_(std::move(scheme)),
      network_(std::move(network)),
      radio_(config.radio),
      rng_(config.seed) {
  if (config_.tick <= 0.0) throw Error(Errc::ConfigError, "tick: must be positive");
  similarity_.normalizer = srp::Normalizer::for_scenario(config_.max_speed);
  if (config_.fixed_tti) tti_ = {*config_.fixed_tti, 0.0};
  const std::size_t n = mobility_->vehicle_count();
  states_.resize(n);
  positions_.resize(n);
  const auto history_length = static_cast<std::size_t>(std::ceil(config_.warm_up / config_.tick)) + 2;
  for (VehicleId v = 0; v < n; ++v) {
    trajectories_.emplace_back(v, config_.trajectory_length);
    warm_up_history_.emplace_back(v, history_length);
  }
  now_ = mobility_->time();
  refresh_kinematics();
  scheme_->start(*this);
  queue_.push({now_ + config_.tick, EventType::MobilityTick, 0, 0, {}});
}

void World::refresh_kinematics() {
  for (VehicleId v = 0; v < states_.size(); ++v) {
    VehicleState s = mobility_->state(v);
    s.timestamp = now_;
    s.tti = tti_.value;
    states_[v] = s;
    positions_[v] = s.position;
    trajectories_[v].append(s);
    if (!warm_up_done_) warm_up_history_[v].append(s);
  }
}

void World::update_tti() {
  if (config_.fixed_tti || !network_) return;
  if (now_ - tti_window_start_ < config_.tti_window - 1e-9) return;
  const auto speeds = mobility_->speed_monitor().mean_speeds();
  if (!speeds.empty()) tti_ = compute_tti(*network_, speeds, now_);
  mobility_->reset_speed_monitor();
  tti_window_start_ = now_;
}

const ClusterView& World::cluster_view() {
  if (!view_) view_ = scheme_->view();
  return *view_;
}

void World::tick() {
  ++tick_index_;
  now_ = static_cast<double>(tick_index_) * config_.tick;
  mobility_->step(config_.tick);
  update_tti();
  refresh_kinematics();
  view_.reset();
  overlay_.reset();
  const bool measuring = now_ >= config_.warm_up - 1e-9;
  if (measuring && !warm_up_done_) {
    warm_up_done_ = true;
    if (warm_up_hook_) warm_up_hook_(*this);
  }
  scheme_->on_tick(*this);
  view_.reset();
  overlay_.reset();

  // Packets waiting for a next hop try again on the new topology.
  const auto waiting = std::exchange(carried_, {});
  for (const auto& [id, holder] : waiting) forward(id, holder);

  if (measuring) {
    const ClusterView& view = cluster_view();
    log_.append(now_, EventKind::Tti, std::nullopt, std::nullopt, format_double(tti_.value));
    log_.append(now_, EventKind::Regions, std::nullopt, std::nullopt, std::to_string(view.cores.size()));
    const bool anyone = std::any_of(view.roles.begin(), view.roles.end(),
                                    [](VehicleRole r) { return r != VehicleRole::Unattached; });
    if (anyone) {
      const double rate = overlap_rate(positions_, view.roles, view.cores, config_.radio.comm_range);
      log_.append(now_, EventKind::Overlap, std::nullopt, std::nullopt, format_double(rate));
    }
  }
  if (config_.validate_each_tick) {
    for (auto& problem : scheme_->validate(*this))
      violations_.push_back(fmt::format("t={}: {}", format_double(now_), problem));
  }
}

void World::run_until(double t) {
  while (!queue_.empty() && queue_.top().time <= t + 1e-9) {
    SimEvent event = queue_.pop();
    now_ = std::max(now_, event.time);
    switch (event.type) {
      case EventType::MobilityTick:
        tick();
        queue_.push({static_cast<double>(tick_index_ + 1) * config_.tick, EventType::MobilityTick, 0, 0, {}});
        break;
      case EventType::Delivery: {
        const Message& msg = std::get<Message>(event.payload);
        if (msg.kind == MessageKind::DataPacket) {
          auto it = packets_.find(msg.packet_id);
          if (it != packets_.end()) {
            it->second.hops = msg.hops;
            forward(msg.packet_id, event.vehicle);
          }
        } else {
          scheme_->on_message(*this, event.vehicle, msg);
        }
        break;
      }
      case EventType::Timer: {
        const auto& timer = std::get<TimerPayload>(event.payload);
        scheme_->on_timer(*this, event.vehicle, timer.kind, timer.token);
        break;
      }
      case EventType::Packet: {
        const auto id = std::get<std::uint64_t>(event.payload);
        const Packet& p = packets_.at(id);
        log_.append(now_, EventKind::PacketSent, p.source, std::nullopt, fmt::format("{}:{}", id, p.destination));
        forward(id, p.source);
        break;
      }
    }
  }
  now_ = std::max(now_, t);
}

void World::send(Message msg) {
  msg.sent_at = now_;
  for (auto& d : radio_.send(positions_, msg))
    queue_.push({d.at, EventType::Delivery, d.receiver, 0, std::move(d.message)});
}

void World::schedule_timer(VehicleId vehicle, double at, int kind, std::uint64_t token) {
  queue_.push({std::max(at, now_), EventType::Timer, vehicle, 0, TimerPayload{kind, token}});
}

void World::inject_packet(VehicleId source, VehicleId destination, double at) {
  if (source >= states_.size() || destination >= states_.size())
    throw Error(Errc::UnknownVehicle, fmt::format("packet endpoint outside fleet of {}", states_.size()));
  const std::uint64_t id = next_packet_++;
  packets_[id] = Packet{source, destination, at, 0, {}};
  queue_.push({at, EventType::Packet, source, 0, id});
}

void World::drop(std::uint64_t id, VehicleId holder, std::string_view reason) {
  log_.append(now_, EventKind::PacketDropped, holder, std::nullopt, fmt::format("{}:{}", id, reason));
  packets_.erase(id);
}

void World::forward(std::uint64_t id, VehicleId holder) {
  Packet& p = packets_.at(id);
  if (holder == p.destination) {
    log_.append(now_, EventKind::PacketDelivered, holder, std::nullopt,
                fmt::format("{}:{}:{}", id, p.hops, format_double(p.created_at)));
    packets_.erase(id);
    return;
  }
  if (now_ - p.created_at > config_.packets.ttl) return drop(id, holder, "ttl");
  if (p.hops >= kHopBudget) return drop(id, holder, "hop_budget");

  const double range = config_.radio.comm_range;
  HopDecision hop;
  if (config_.router == RouterKind::Rcms) {
    if (!overlay_) overlay_ = overlay_graph(positions_, cluster_view(), range);
    const auto path = overlay_path(*overlay_, holder, p.destination);
    if (path) {
      hop.next = (*path)[1];
    } else {
      hop.carry = true;
    }
  } else {
    hop = next_hop(config_.router, positions_, cluster_view(), range, holder, p.destination, p.progress);
  }
  if (!hop.next) {
    if (hop.carry) {
      carried_[id] = holder;
    } else {
      drop(id, holder, "no_route");
    }
    return;
  }

  Message msg;
  msg.kind = MessageKind::DataPacket;
  msg.sender = holder;
  msg.receiver = *hop.next;
  msg.sent_at = now_;
  msg.packet_id = id;
  msg.source = p.source;
  msg.destination = p.destination;
  msg.created_at = p.created_at;
  msg.hops = p.hops + 1;
  if (radio_.busy_until(holder) - now_ > config_.radio.max_queue_delay) return drop(id, holder, "queue");
  auto delivery = radio_.send_acknowledged(positions_, msg, config_.packets.hop_retries);
  if (!delivery) {
    // Lost after every retry: hold the packet and try again on the next topology.
    carried_[id] = holder;
    return;
  }
  queue_.push({delivery->at, EventType::Delivery, delivery->receiver, 0, std::move(delivery->message)});
}

}  // namespace rcms
