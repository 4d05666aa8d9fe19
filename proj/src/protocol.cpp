#include "rcms/protocol.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace rcms {

namespace {

double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

Trajectory to_trajectory(VehicleId id, const std::vector<VehicleState>& history) {
  Trajectory t(id, std::max<std::size_t>(history.size(), 1));
  for (const auto& s : history) {
    if (t.empty() || s.timestamp > t.back().timestamp) t.append(s);
  }
  return t;
}

std::vector<VehicleState> to_history(const Trajectory& t) { return {t.begin(), t.end()}; }

}  // namespace

RcmsProtocol::RcmsProtocol(ProtocolConfig config, double start_time)
    : config_(config), scaling_(ThresholdScaling::from(config)), start_time_(start_time) {
  config_.validate();
  next_period_check_ = start_time_ + config_.zeta;
}

void RcmsProtocol::start(SimContext& ctx) {
  vehicles_.assign(ctx.vehicle_count(), {});
  std::uniform_real_distribution<double> jitter(0.0, config_.zeta);
  for (VehicleId v = 0; v < vehicles_.size(); ++v) {
    auto& st = vehicles_[v];
    ctx.schedule_timer(v, start_time_ + jitter(ctx.rng()), kStart, ++st.timer_token);
  }
}

bool RcmsProtocol::heading_acceptable(const SimContext& ctx, const VehicleState& self,
                                      const VehicleState& core) const {
  return ctx.tti().value > config_.tti_congestion_threshold || heading_sign_relative_to(self, core) == +1;
}

std::vector<VehicleId> RcmsProtocol::fresh_cores_in_range(const SimContext& ctx, VehicleId v) const {
  std::vector<VehicleId> out;
  const Vec2 here = ctx.positions()[v];
  for (const auto& [core, info] : vehicles_[v].heard) {
    if (ctx.now() - info.heard_at > stale_after()) continue;
    if (distance(here, info.state.position) > config_.comm_range) continue;
    out.push_back(core);
  }
  return out;
}

double RcmsProtocol::lambda(const SimContext& ctx, const std::vector<VehicleState>& core_history,
                            VehicleId ordinary) const {
  if (ctx.tti().value <= config_.tti_congestion_threshold || core_history.empty()) return 1.0;
  return ctx.similarity()(to_trajectory(core_history.front().vehicle_id, core_history), ctx.trajectory(ordinary));
}

void RcmsProtocol::begin_construction(SimContext& ctx, VehicleId v) {
  auto& st = vehicles_[v];
  ctx.log().append(ctx.now(), EventKind::Construct, v, std::nullopt, st.ever_attached ? "re" : "initial");
  st.role = VehicleRole::Unattached;
  st.region_id.reset();
  st.core_id = kBroadcast;
  st.roster.clear();
  st.roster_at_check.clear();
  st.alone_since.reset();
  st.awaiting_agreement.reset();
  st.promotion_backoff_since.reset();
  st.known_cores_in_range.clear();
  st.overlap_window.clear();
  st.silent_rounds = 0;
  send_read(ctx, v);
}

void RcmsProtocol::send_read(SimContext& ctx, VehicleId v) {
  auto& st = vehicles_[v];
  st.pending_rogers.clear();
  st.waiting_timer = ctx.now() + config_.zeta;
  Message msg;
  msg.kind = MessageKind::Read;
  msg.sender = v;
  msg.state = ctx.state(v);
  msg.state.role = VehicleRole::Unattached;
  msg.history = to_history(ctx.trajectory(v));
  ctx.send(std::move(msg));
  ctx.schedule_timer(v, *st.waiting_timer, kReadTimeout, ++st.timer_token);
}

RegionId RcmsProtocol::promote(SimContext& ctx, VehicleId v, std::string_view reason) {
  if (vehicles_.empty()) vehicles_.assign(ctx.vehicle_count(), {});
  auto& st = vehicles_[v];
  if (st.region_id) remove_from_region(v);
  const RegionId id = next_region_++;
  Region region;
  region.region_id = id;
  region.core_id = v;
  region.member_ids = {v};
  region.created_at = ctx.now();
  regions_[id] = region;
  st.role = VehicleRole::Core;
  st.region_id = id;
  st.core_id = v;
  st.waiting_timer.reset();
  st.awaiting_agreement.reset();
  st.promotion_backoff_since.reset();
  st.pending_rogers.clear();
  st.roster.clear();
  st.roster_at_check.clear();
  st.alone_since = ctx.now();
  st.ever_attached = true;
  ++st.timer_token;  // cancels any pending construction timer
  ctx.log().append(ctx.now(), EventKind::RegionCreate, v, id, std::string(reason));

  Message beacon;
  beacon.kind = MessageKind::CoreBeacon;
  beacon.sender = v;
  beacon.state = ctx.state(v);
  beacon.state.role = VehicleRole::Core;
  beacon.region_id = id;
  beacon.core_id = v;
  beacon.next_heading = ctx.next_heading(v);
  beacon.intersection = ctx.upcoming_intersection(v);
  ctx.send(std::move(beacon));
  return id;
}

void RcmsProtocol::on_read_timeout(SimContext& ctx, VehicleId v) {
  auto& st = vehicles_[v];
  st.waiting_timer.reset();
  if (st.role != VehicleRole::Unattached) return;
  const Vec2 here = ctx.positions()[v];
  std::vector<RogerInfo> rogers = std::move(st.pending_rogers);
  st.pending_rogers.clear();

  if (rogers.empty()) {
    ++st.silent_rounds;
    if (st.silent_rounds > config_.max_read_retries) {
      std::uniform_real_distribution<double> backoff(0.0, config_.zeta);
      st.promotion_backoff_since = ctx.now();
      ctx.schedule_timer(v, ctx.now() + backoff(ctx.rng()), kPromoteBackoff, ++st.timer_token);
    } else {
      send_read(ctx, v);
    }
    return;
  }

  const VehicleState self = ctx.state(v);
  const RogerInfo* chosen = &rogers.front();
  if (rogers.size() > 1) {
    double best = -1.0;
    for (const auto& r : rogers) {
      const double tau = cooperative_threshold(self, r.state, ctx.tti(), lambda(ctx, r.history, v), scaling_,
                                               config_.tti_congestion_threshold);
      if (tau > best || (tau == best && r.core_id < chosen->core_id)) {
        best = tau;
        chosen = &r;
      }
    }
  }
  std::size_t in_range = 0;
  for (const auto& r : rogers) {
    if (distance(here, r.state.position) <= config_.comm_range) ++in_range;
  }
  st.join_as_gateway = in_range >= 2;
  st.awaiting_agreement = chosen->core_id;

  Message req;
  req.kind = MessageKind::CoopRequest;
  req.sender = v;
  req.receiver = chosen->core_id;
  req.state = self;
  req.state.role = VehicleRole::Unattached;
  req.history = to_history(ctx.trajectory(v));
  req.region_id = chosen->region;
  req.core_id = chosen->core_id;
  ctx.send(std::move(req));
  ctx.schedule_timer(v, ctx.now() + config_.zeta, kAgreementTimeout, ++st.timer_token);
}

void RcmsProtocol::join(SimContext& ctx, VehicleId v, VehicleId core, RegionId region_id) {
  auto& st = vehicles_[v];
  auto& region = regions_.at(region_id);
  region.member_ids.insert(v);
  st.role = st.join_as_gateway ? VehicleRole::Gateway : VehicleRole::Ordinary;
  if (st.role == VehicleRole::Gateway) region.gateway_ids.insert(v);
  st.region_id = region_id;
  st.core_id = core;
  st.core_heard_at = ctx.now();
  st.ever_attached = true;
  st.awaiting_agreement.reset();
  st.silent_rounds = 0;
  st.last_update_sent = ctx.now();
  st.speed_at_last_update = ctx.state(v).speed.norm();
  st.handled_approach = ctx.approach_token(v);
  ++st.timer_token;
  ctx.log().append(ctx.now(), EventKind::Join, v, region_id, std::to_string(core));
}

void RcmsProtocol::remove_from_region(VehicleId v) {
  auto& st = vehicles_[v];
  if (st.region_id) {
    auto it = regions_.find(*st.region_id);
    if (it != regions_.end()) {
      it->second.member_ids.erase(v);
      it->second.gateway_ids.erase(v);
    }
  }
  st.region_id.reset();
  st.role = VehicleRole::Unattached;
  st.core_id = kBroadcast;
}

void RcmsProtocol::detach(SimContext& ctx, VehicleId v, std::string_view reason, bool notify_core) {
  auto& st = vehicles_[v];
  const auto region = st.region_id;
  if (notify_core && st.core_id != kBroadcast) {
    Message msg;
    msg.kind = MessageKind::StateUpdate;
    msg.sender = v;
    msg.receiver = st.core_id;
    msg.state = ctx.state(v);
    msg.state.role = st.role;
    msg.region_id = region.value_or(kNoRegion);
    msg.leaving = true;
    ctx.send(std::move(msg));
  }
  ctx.log().append(ctx.now(), EventKind::Leave, v, region, std::string(reason));
  remove_from_region(v);
  begin_construction(ctx, v);
}

void RcmsProtocol::dissolve(SimContext& ctx, RegionId region_id, std::string_view reason) {
  auto it = regions_.find(region_id);
  if (it == regions_.end()) return;
  const Region region = it->second;
  regions_.erase(it);
  ctx.log().append(ctx.now(), EventKind::RegionEnd, region.core_id, region_id, std::string(reason));

  Message change;
  change.kind = MessageKind::RegionChangeBroadcast;
  change.sender = region.core_id;
  change.state = ctx.state(region.core_id);
  change.region_id = region_id;
  change.core_id = region.core_id;
  change.dissolve = true;
  ctx.send(std::move(change));

  for (VehicleId m : region.member_ids) {
    auto& st = vehicles_[m];
    st.region_id.reset();
    st.role = VehicleRole::Unattached;
    st.core_id = kBroadcast;
    begin_construction(ctx, m);
  }
}

void RcmsProtocol::on_timer(SimContext& ctx, VehicleId v, int kind, std::uint64_t token) {
  auto& st = vehicles_.at(v);
  if (token != st.timer_token) return;
  switch (kind) {
    case kStart:
      if (st.role == VehicleRole::Unattached && !st.region_id) begin_construction(ctx, v);
      break;
    case kReadTimeout:
      on_read_timeout(ctx, v);
      break;
    case kAgreementTimeout:
      if (st.role == VehicleRole::Unattached && st.awaiting_agreement) {
        st.awaiting_agreement.reset();
        send_read(ctx, v);
      }
      break;
    case kPromoteBackoff: {
      if (st.role != VehicleRole::Unattached || !st.promotion_backoff_since) break;
      const double since = *st.promotion_backoff_since;
      st.promotion_backoff_since.reset();
      const VehicleState self = ctx.state(v);
      bool heard_core = false;
      for (const auto& [core, info] : st.heard) {
        if (info.heard_at < since) continue;
        if (distance(self.position, info.state.position) > config_.comm_range) continue;
        if (heading_acceptable(ctx, self, info.state)) heard_core = true;
      }
      if (heard_core) {
        st.silent_rounds = 0;
        send_read(ctx, v);
      } else {
        promote(ctx, v);
      }
      break;
    }
    default:
      break;
  }
}

void RcmsProtocol::on_message(SimContext& ctx, VehicleId r, const Message& msg) {
  if (!active(ctx) || vehicles_.empty()) return;
  auto& st = vehicles_.at(r);
  switch (msg.kind) {
    case MessageKind::Read: {
      if (st.role != VehicleRole::Core || !st.region_id) return;
      const VehicleState self = ctx.state(r);
      const bool two_way = ctx.tti().value > config_.tti_congestion_threshold;
      if (!two_way && heading_sign_relative_to(msg.state, self) != +1) return;
      Message roger;
      roger.kind = MessageKind::Roger;
      roger.sender = r;
      roger.state = self;
      roger.state.role = VehicleRole::Core;
      roger.history = to_history(ctx.trajectory(r));
      roger.region_id = *st.region_id;
      roger.core_id = r;
      roger.two_way = two_way;
      ctx.send(std::move(roger));
      break;
    }
    case MessageKind::Roger: {
      auto& heard = st.heard[msg.sender];
      heard.state = msg.state;
      heard.region = msg.region_id;
      heard.heard_at = ctx.now();
      if (st.role != VehicleRole::Unattached || !st.waiting_timer || st.awaiting_agreement) return;
      const VehicleState self = ctx.state(r);
      if (!msg.two_way && heading_sign_relative_to(self, msg.state) != +1) return;
      auto it = std::find_if(st.pending_rogers.begin(), st.pending_rogers.end(),
                             [&](const RogerInfo& x) { return x.core_id == msg.sender; });
      RogerInfo info{msg.sender, msg.region_id, msg.state, msg.history};
      if (it == st.pending_rogers.end()) {
        st.pending_rogers.push_back(std::move(info));
      } else {
        *it = std::move(info);
      }
      break;
    }
    case MessageKind::CoopRequest: {
      if (st.role != VehicleRole::Core || !st.region_id || msg.region_id != *st.region_id) return;
      auto& entry = st.roster[msg.sender];
      entry.last = msg.state;
      entry.updated_at = ctx.now();
      entry.history = to_trajectory(msg.sender, msg.history);
      Message agree;
      agree.kind = MessageKind::CoopAgreement;
      agree.sender = r;
      agree.receiver = msg.sender;
      agree.state = ctx.state(r);
      agree.state.role = VehicleRole::Core;
      agree.region_id = *st.region_id;
      agree.core_id = r;
      ctx.send(std::move(agree));
      break;
    }
    case MessageKind::CoopAgreement: {
      auto region = regions_.find(msg.region_id);
      const bool valid = st.role == VehicleRole::Unattached && st.awaiting_agreement == msg.sender &&
                         region != regions_.end() && region->second.core_id == msg.sender;
      if (valid) {
        join(ctx, r, msg.sender, msg.region_id);
        st.heard[msg.sender].state = msg.state;
        st.heard[msg.sender].region = msg.region_id;
        st.heard[msg.sender].heard_at = ctx.now();
        return;
      }
      ctx.log().append(ctx.now(), EventKind::StaleAgreement, r, msg.region_id, std::to_string(msg.sender));
      if (st.core_id == msg.sender) return;
      Message decline;
      decline.kind = MessageKind::StateUpdate;
      decline.sender = r;
      decline.receiver = msg.sender;
      decline.state = ctx.state(r);
      decline.region_id = msg.region_id;
      decline.leaving = true;
      ctx.send(std::move(decline));
      break;
    }
    case MessageKind::StateUpdate: {
      if (st.role != VehicleRole::Core || !st.region_id || msg.region_id != *st.region_id) return;
      if (msg.leaving) {
        st.roster.erase(msg.sender);
        st.roster_at_check.erase(msg.sender);
        return;
      }
      auto [it, inserted] = st.roster.try_emplace(msg.sender, RosterEntry{msg.state, ctx.now(), Trajectory(msg.sender)});
      auto& entry = it->second;
      entry.last = msg.state;
      entry.updated_at = ctx.now();
      if (entry.history.empty() || msg.state.timestamp > entry.history.back().timestamp) entry.history.append(msg.state);
      break;
    }
    case MessageKind::CoreBeacon: {
      auto& heard = st.heard[msg.sender];
      heard.state = msg.state;
      heard.region = msg.region_id;
      heard.heard_at = ctx.now();
      heard.next_heading = msg.next_heading;
      heard.upcoming = msg.intersection;
      heard.roster_size = msg.roster_size;
      if (msg.sender == st.core_id) st.core_heard_at = ctx.now();
      break;
    }
    case MessageKind::RegionChangeBroadcast: {
      if (msg.dissolve) {
        st.heard.erase(msg.sender);
        return;
      }
      if (st.region_id && *st.region_id == msg.region_id && st.core_id == msg.core_id) st.core_heard_at = ctx.now();
      auto& heard = st.heard[msg.core_id];
      heard.state = msg.state;
      heard.region = msg.region_id;
      heard.heard_at = ctx.now();
      break;
    }
    case MessageKind::ReplaceRequest:
    case MessageKind::DataPacket:
      break;
  }
}

void RcmsProtocol::on_tick(SimContext& ctx) {
  if (!active(ctx) || vehicles_.empty()) return;
  for (VehicleId v = 0; v < vehicles_.size(); ++v) {
    auto& st = vehicles_[v];
    std::erase_if(st.heard, [&](const auto& kv) { return ctx.now() - kv.second.heard_at > 4.0 * stale_after(); });
    if (st.role == VehicleRole::Core) {
      core_tick(ctx, v);
    } else if (st.role == VehicleRole::Ordinary || st.role == VehicleRole::Gateway) {
      member_tick(ctx, v);
    }
  }
  if (ctx.now() + 1e-9 >= next_period_check_) {
    run_period_checks(ctx);
    while (next_period_check_ <= ctx.now() + 1e-9) next_period_check_ += config_.zeta;
  }
}

void RcmsProtocol::core_tick(SimContext& ctx, VehicleId v) {
  auto& st = vehicles_[v];
  const VehicleState self = ctx.state(v);

  const RegionId own = *st.region_id;
  if (st.roster.empty() && regions_.at(own).member_ids.size() == 1) {
    if (!st.alone_since) st.alone_since = ctx.now();
    // A lone core folds into a neighbouring region it could join instead.
    if (ctx.now() - *st.alone_since > config_.updating_interval) {
      for (const auto& [core, info] : st.heard) {
        if (core == v || ctx.now() - info.heard_at > stale_after()) continue;
        if (distance(self.position, info.state.position) > config_.comm_range) continue;
        if (!heading_acceptable(ctx, self, info.state)) continue;
        if (info.roster_size == 0 && core > v) continue;
        auto region = regions_.find(info.region);
        if (region == regions_.end() || region->second.core_id != core) continue;
        dissolve(ctx, own, "empty");
        return;
      }
    }
  } else {
    st.alone_since.reset();
  }

  Message beacon;
  beacon.kind = MessageKind::CoreBeacon;
  beacon.sender = v;
  beacon.state = self;
  beacon.state.role = VehicleRole::Core;
  beacon.region_id = *st.region_id;
  beacon.core_id = v;
  beacon.next_heading = ctx.next_heading(v);
  beacon.intersection = ctx.upcoming_intersection(v);
  beacon.roster_size = st.roster.size();
  ctx.send(std::move(beacon));
}

void RcmsProtocol::member_tick(SimContext& ctx, VehicleId v) {
  auto& st = vehicles_[v];
  const double ui = config_.updating_interval;
  if (ctx.now() - st.core_heard_at > config_.zeta + ui) {
    detach(ctx, v, "core_lost", false);
    return;
  }

  const VehicleState self = ctx.state(v);
  auto core_info = st.heard.find(st.core_id);

  // Decomposition when entering an intersection zone.
  const std::uint64_t token = ctx.approach_token(v);
  if (ctx.distance_to_intersection(v) <= config_.approach_radius && token != st.handled_approach &&
      core_info != st.heard.end()) {
    st.handled_approach = token;
    const HeardCore& core = core_info->second;
    const IntersectionId mine = ctx.upcoming_intersection(v);
    const Vec2 my_next = ctx.next_heading(v);
    const Vec2 core_next =
        (mine != kNoIntersection && core.upcoming == mine) ? core.next_heading : core.state.heading();
    if (my_next.dot(core_next) < config_.turn_match_cosine) {
      detach(ctx, v, "turn", true);
      return;
    }
    if (decomposition_value(core.state, self, scaling_) > config_.decomposition_threshold) {
      detach(ctx, v, "divergence", true);
      return;
    }
  }

  // State updates to the core.
  const double speed = self.speed.norm();
  double interval = ui;
  if (ctx.tti().value > config_.tti_congestion_threshold) {
    const double change = std::abs(speed - st.speed_at_last_update);
    const bool large = change > config_.speed_change_fraction * std::max(st.speed_at_last_update, 1e-9);
    interval = large ? ui : 2.0 * ui;
  }
  if (ctx.now() - st.last_update_sent >= interval - 1e-9) {
    Message msg;
    msg.kind = MessageKind::StateUpdate;
    msg.sender = v;
    msg.receiver = st.core_id;
    msg.state = self;
    msg.state.role = st.role;
    if (core_info != st.heard.end()) msg.state.heading_sign = heading_sign_relative_to(self, core_info->second.state);
    msg.region_id = *st.region_id;
    ctx.send(std::move(msg));
    st.last_update_sent = ctx.now();
    st.speed_at_last_update = speed;
  }

  // Gateway role follows the set of cores currently heard.
  const auto cores = fresh_cores_in_range(ctx, v);
  st.known_cores_in_range = {cores.begin(), cores.end()};
  auto& region = regions_.at(*st.region_id);
  if (cores.size() >= 2) {
    st.role = VehicleRole::Gateway;
    region.gateway_ids.insert(v);
  } else {
    st.role = VehicleRole::Ordinary;
    region.gateway_ids.erase(v);
  }
}

void RcmsProtocol::run_period_checks(SimContext& ctx) {
  std::vector<VehicleId> cores;
  for (const auto& [id, region] : regions_) cores.push_back(region.core_id);
  std::sort(cores.begin(), cores.end());
  for (VehicleId c : cores) {
    if (vehicles_[c].role == VehicleRole::Core) replacement_check(ctx, c);
  }
  aggregation_check(ctx);
}

void RcmsProtocol::replacement_check(SimContext& ctx, VehicleId c) {
  auto& st = vehicles_[c];
  const RegionId region_id = *st.region_id;
  const Vec2 here = ctx.positions()[c];
  auto connected = [&](const RosterEntry& e) {
    return ctx.now() - e.updated_at <= stale_after() && distance(here, e.last.position) <= config_.comm_range;
  };

  const std::size_t previous = st.roster_at_check.size();
  std::size_t lost = 0;
  for (VehicleId m : st.roster_at_check) {
    auto it = st.roster.find(m);
    if (it == st.roster.end() || !connected(it->second)) ++lost;
  }
  std::erase_if(st.roster, [&](const auto& kv) { return !connected(kv.second); });

  const bool trigger = static_cast<int>(previous) >= config_.replacement_min_roster &&
                       static_cast<double>(lost) > config_.replacement_loss_fraction * static_cast<double>(previous);
  if (!trigger) {
    st.roster_at_check.clear();
    for (const auto& [m, e] : st.roster) st.roster_at_check.insert(m);
    return;
  }

  // Survivors still attached to this region and heard recently.
  std::vector<VehicleId> survivors;
  for (const auto& [m, e] : st.roster) {
    if (vehicles_[m].region_id == region_id) survivors.push_back(m);
  }
  std::vector<VehicleId> candidates;
  for (VehicleId s : survivors) {
    std::size_t reach = 0;
    for (VehicleId o : survivors) {
      if (o != s && distance(st.roster.at(s).last.position, st.roster.at(o).last.position) <= config_.comm_range)
        ++reach;
    }
    if (2 * reach >= survivors.size() - 1) candidates.push_back(s);
  }
  if (candidates.empty()) {
    dissolve(ctx, region_id, "dissolve");
    return;
  }

  VehicleId winner = candidates.front();
  if (candidates.size() > 1 || survivors.size() > 1) {
    double best = -std::numeric_limits<double>::infinity();
    for (VehicleId s : candidates) {
      std::vector<VehicleState> others;
      double lambda_sum = 0.0;
      const bool congested = ctx.tti().value > config_.tti_congestion_threshold;
      for (VehicleId o : survivors) {
        if (o == s) continue;
        others.push_back(st.roster.at(o).last);
        lambda_sum += congested ? ctx.similarity()(st.roster.at(s).history, st.roster.at(o).history) : 1.0;
      }
      if (others.empty()) continue;
      const double lam = lambda_sum / static_cast<double>(others.size());
      const double score = replacement_score(st.roster.at(s).last, others, lam, config_.replacement_mode, scaling_);
      if (score > best) {
        best = score;
        winner = s;
      }
    }
  }

  // Switch the region over to the winner, dropping members that fell silent.
  auto& region = regions_.at(region_id);
  std::vector<VehicleId> pruned;
  for (VehicleId m : region.member_ids) {
    if (m != c && !std::binary_search(survivors.begin(), survivors.end(), m)) pruned.push_back(m);
  }
  region.core_id = winner;
  region.gateway_ids.erase(winner);
  auto& w = vehicles_[winner];
  w.role = VehicleRole::Core;
  w.core_id = winner;
  w.roster.clear();
  w.roster_at_check.clear();
  w.alone_since.reset();
  for (VehicleId s : survivors) {
    if (s == winner) continue;
    w.roster[s] = st.roster.at(s);
    w.roster.at(s).updated_at = ctx.now();
    w.roster_at_check.insert(s);
    vehicles_[s].core_id = winner;
    vehicles_[s].core_heard_at = ctx.now();
  }
  ctx.log().append(ctx.now(), EventKind::Replace, winner, region_id, std::to_string(c));

  Message handover;
  handover.kind = MessageKind::ReplaceRequest;
  handover.sender = c;
  handover.receiver = winner;
  handover.state = ctx.state(c);
  handover.region_id = region_id;
  handover.core_id = winner;
  handover.members = survivors;
  ctx.send(std::move(handover));

  Message change;
  change.kind = MessageKind::RegionChangeBroadcast;
  change.sender = winner;
  change.state = ctx.state(winner);
  change.state.role = VehicleRole::Core;
  change.region_id = region_id;
  change.core_id = winner;
  change.members = survivors;
  ctx.send(std::move(change));

  for (VehicleId m : pruned) {
    ctx.log().append(ctx.now(), EventKind::Leave, m, region_id, "pruned");
    remove_from_region(m);
    begin_construction(ctx, m);
  }
  ctx.log().append(ctx.now(), EventKind::Leave, c, region_id, "replaced");
  remove_from_region(c);
  begin_construction(ctx, c);
}

void RcmsProtocol::aggregation_check(SimContext& ctx) {
  // Gateways of each region pair that currently hear both cores.
  std::map<std::pair<RegionId, RegionId>, std::set<VehicleId>> overlapping;
  for (const auto& [id, region] : regions_) {
    for (VehicleId g : region.gateway_ids) {
      auto& gst = vehicles_[g];
      bool any = false;
      for (VehicleId k : gst.known_cores_in_range) {
        if (k == region.core_id) continue;
        const auto& kst = vehicles_[k];
        if (kst.role != VehicleRole::Core || !kst.region_id || *kst.region_id == id) continue;
        if (std::find(gst.known_cores_in_range.begin(), gst.known_cores_in_range.end(), region.core_id) ==
            gst.known_cores_in_range.end())
          continue;
        overlapping[std::minmax(id, *kst.region_id)].insert(g);
        any = true;
      }
      gst.overlap_window.push_back(any);
      while (gst.overlap_window.size() > 2) gst.overlap_window.pop_front();
    }
  }

  std::map<std::pair<RegionId, RegionId>, int> streak;
  std::vector<std::pair<RegionId, RegionId>> due;
  for (const auto& [pair, gateways] : overlapping) {
    const auto& a = regions_.at(pair.first);
    const auto& b = regions_.at(pair.second);
    const double total = static_cast<double>(a.gateway_ids.size() + b.gateway_ids.size());
    if (static_cast<double>(gateways.size()) / total <= config_.overlap_agg_fraction) continue;
    const int periods = overlap_streak_.count(pair) ? overlap_streak_.at(pair) + 1 : 1;
    streak[pair] = periods;
    const double core_gap = distance(ctx.positions()[a.core_id], ctx.positions()[b.core_id]);
    if (periods >= 2 && core_gap <= config_.comm_range / 2.0) due.push_back(pair);
  }
  overlap_streak_ = std::move(streak);

  std::set<RegionId> merged;
  for (const auto& pair : due) {
    if (merged.count(pair.first) || merged.count(pair.second)) continue;
    const Region a = regions_.at(pair.first);
    const Region b = regions_.at(pair.second);
    const int periods = overlap_streak_.at(pair);

    const VehicleState core_a = ctx.state(a.core_id);
    const VehicleState core_b = ctx.state(b.core_id);
    VehicleId winner = kBroadcast;
    double best = -1.0;
    for (VehicleId g : overlapping.at(pair)) {
      const VehicleState gs = ctx.state(g);
      const bool congested = ctx.tti().value > config_.tti_congestion_threshold;
      const double lam_a = congested ? ctx.similarity()(ctx.trajectory(a.core_id), ctx.trajectory(g)) : 1.0;
      const double lam_b = congested ? ctx.similarity()(ctx.trajectory(b.core_id), ctx.trajectory(g)) : 1.0;
      const std::pair<VehicleState, double> cores[] = {
          {core_a, cooperative_threshold(gs, core_a, ctx.tti(), lam_a, scaling_, config_.tti_congestion_threshold)},
          {core_b, cooperative_threshold(gs, core_b, ctx.tti(), lam_b, scaling_, config_.tti_congestion_threshold)},
      };
      const double phi = aggregation_threshold(gs, cores, scaling_);
      if (phi > best || (phi == best && g < winner)) {
        best = phi;
        winner = g;
      }
    }
    if (winner == kBroadcast) continue;

    const RegionId id = next_region_++;
    Region region;
    region.region_id = id;
    region.core_id = winner;
    region.created_at = ctx.now();
    std::set_union(a.member_ids.begin(), a.member_ids.end(), b.member_ids.begin(), b.member_ids.end(),
                   std::inserter(region.member_ids, region.member_ids.end()));
    regions_.erase(pair.first);
    regions_.erase(pair.second);
    regions_[id] = region;
    merged.insert(pair.first);
    merged.insert(pair.second);
    ctx.log().append(ctx.now(), EventKind::RegionEnd, a.core_id, pair.first, "merge");
    ctx.log().append(ctx.now(), EventKind::RegionEnd, b.core_id, pair.second, "merge");
    ctx.log().append(ctx.now(), EventKind::RegionCreate, winner, id, "merge");
    merges_.push_back({ctx.now(), pair.first, pair.second, id, periods, winner});

    for (VehicleId m : region.member_ids) {
      auto& st = vehicles_[m];
      const bool former_core = st.role == VehicleRole::Core;
      st.region_id = id;
      st.core_id = winner;
      st.core_heard_at = ctx.now();
      st.roster.clear();
      st.roster_at_check.clear();
      st.alone_since.reset();
      st.role = m == winner ? VehicleRole::Core : VehicleRole::Ordinary;
      if (former_core) {
        st.candidate_core = true;
        st.last_update_sent = ctx.now();
        st.speed_at_last_update = ctx.state(m).speed.norm();
        st.handled_approach = ctx.approach_token(m);
      }
    }
    auto& w = vehicles_[winner];
    for (VehicleId m : region.member_ids) {
      if (m == winner) continue;
      RosterEntry entry{ctx.state(m), ctx.now(), ctx.trajectory(m)};
      w.roster.emplace(m, std::move(entry));
      w.roster_at_check.insert(m);
    }

    Message change;
    change.kind = MessageKind::RegionChangeBroadcast;
    change.sender = winner;
    change.state = ctx.state(winner);
    change.state.role = VehicleRole::Core;
    change.region_id = id;
    change.core_id = winner;
    change.members.assign(region.member_ids.begin(), region.member_ids.end());
    ctx.send(std::move(change));
  }
}

ClusterView RcmsProtocol::view() const {
  ClusterView out;
  const std::size_t n = vehicles_.size();
  out.roles.resize(n);
  out.head.assign(n, kBroadcast);
  out.region.assign(n, kNoRegion);
  out.heard_cores.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    const auto& st = vehicles_[v];
    out.roles[v] = st.role;
    if (st.region_id) {
      out.region[v] = *st.region_id;
      out.head[v] = regions_.at(*st.region_id).core_id;
    }
    if (st.role == VehicleRole::Gateway) out.heard_cores[v].assign(st.known_cores_in_range.begin(), st.known_cores_in_range.end());
  }
  for (const auto& [id, region] : regions_) out.cores.push_back(region.core_id);
  std::sort(out.cores.begin(), out.cores.end());
  return out;
}

std::vector<std::string> RcmsProtocol::validate(const SimContext&) const {
  std::vector<std::string> problems;
  std::vector<int> memberships(vehicles_.size(), 0);
  for (const auto& [id, region] : regions_) {
    if (region.member_ids.empty()) problems.push_back(fmt::format("region {} has no members", id));
    int core_roles = 0;
    for (VehicleId m : region.member_ids) {
      ++memberships[m];
      const auto& st = vehicles_[m];
      if (st.region_id != id) problems.push_back(fmt::format("vehicle {} listed in region {} but records another", m, id));
      if (st.role == VehicleRole::Core) ++core_roles;
    }
    if (!region.member_ids.count(region.core_id))
      problems.push_back(fmt::format("core {} of region {} is not a member", region.core_id, id));
    if (core_roles != 1) problems.push_back(fmt::format("region {} has {} cores", id, core_roles));
    if (vehicles_[region.core_id].role != VehicleRole::Core)
      problems.push_back(fmt::format("core {} of region {} has role {}", region.core_id, id,
                                     to_string(vehicles_[region.core_id].role)));
    for (VehicleId g : region.gateway_ids) {
      if (!region.member_ids.count(g)) problems.push_back(fmt::format("gateway {} outside region {}", g, id));
    }
  }
  for (std::size_t v = 0; v < vehicles_.size(); ++v) {
    const auto& st = vehicles_[v];
    const bool attached = st.role != VehicleRole::Unattached;
    if (attached && memberships[v] != 1)
      problems.push_back(fmt::format("vehicle {} belongs to {} regions", v, memberships[v]));
    if (!attached && (memberships[v] != 0 || st.region_id))
      problems.push_back(fmt::format("unattached vehicle {} still holds a region", v));
  }
  for (const auto& m : merges_) {
    if (m.consecutive_periods < 2)
      problems.push_back(fmt::format("regions {} and {} merged after {} period(s)", m.first, m.second,
                                     m.consecutive_periods));
  }
  return problems;
}

}  // namespace rcms
