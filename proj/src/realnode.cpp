#include "qkdnet/realnode.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>

#include "json.hpp"

#include "qkdnet/node.hpp"

namespace qkdnet {

namespace {

namespace fs = std::filesystem;

double wall_now_s() {
  timespec ts{};
  clock_gettime(CLOCK_REALTIME, &ts);
  return double(ts.tv_sec) + double(ts.tv_nsec) * 1e-9;
}

bool parse_addr(const std::string& s, sockaddr_in& out) {
  size_t colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= s.size()) return false;
  std::string host = s.substr(0, colon);
  int port = std::atoi(s.c_str() + colon + 1);
  if (port <= 0 || port > 65535) return false;
  out = {};
  out.sin_family = AF_INET;
  out.sin_port = htons(uint16_t(port));
  return inet_pton(AF_INET, host.c_str(), &out.sin_addr) == 1;
}

bool set_nonblock(int fd) {
  int flags = fcntl(fd, F_GETFL, 0);
  return flags >= 0 && fcntl(fd, F_SETFL, flags | O_NONBLOCK) == 0;
}

void set_nodelay(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

struct Conn {
  int fd = -1;
  bool outbound = false;
  bool connecting = false;  // non-blocking connect still in flight
  std::string peer;         // empty until the inbound side sees a Hello
  Bytes inbuf;
  Bytes outbuf;
};

struct Dial {
  std::string addr;
  double next_attempt_wall = 0.0;
  double backoff_s = 0.5;
  bool connected = false;
};

constexpr double kBackoffMax = 8.0;

class RealNode {
 public:
  explicit RealNode(const RealNodeOptions& opt)
      : opt_(opt), sc_(opt.scenario), node_(make_node_config(opt.scenario, opt.node_index)) {}

  ~RealNode() {
    for (auto& c : conns_) {
      if (c && c->fd >= 0) ::close(c->fd);
    }
    if (listener_ >= 0) ::close(listener_);
  }

  int run() {
    if (!init()) return 1;
    loop();
    finalize();
    return 0;
  }

 private:
  const RealNodeOptions& opt_;
  const Scenario& sc_;
  Node node_;
  std::map<uint32_t, MemoryMedium> media_;
  std::map<uint32_t, LinkEmitter> emitters_;
  std::map<uint32_t, uint64_t> next_cycle_k_;
  uint64_t next_poll_k_ = 1;
  uint64_t next_report_k_ = 1;
  int listener_ = -1;
  std::vector<std::unique_ptr<Conn>> conns_;
  std::map<std::string, Dial> dials_;
  std::map<std::string, std::deque<Bytes>> pending_;  // frames awaiting a connection
  std::string state_dir_, logs_dir_, tables_dir_, telemetry_dir_, summary_dir_;
  std::ofstream keyuse_file_, wire_file_;
  size_t flushed_keyuse_ = 0, flushed_wire_ = 0;
  double grace_deadline_wall_ = 0.0;
  bool io_failed_ = false;

  double vnow_s(double wall) const {
    double v = (wall - opt_.start_epoch_s) * sc_.time_compression;
    return v < 0 ? 0.0 : v;
  }

  std::vector<uint32_t> adjacent_links() const {
    std::vector<uint32_t> out;
    const NodeConfig& cfg = node_.config();
    if (cfg.left_link) out.push_back(*cfg.left_link);
    if (cfg.right_link) out.push_back(*cfg.right_link);
    return out;
  }

  const LinkProfile& profile_of(uint32_t link) const {
    return sc_.links[link - 1];  // validated: links[i].link_index == i + 1
  }

  bool init() {
    fs::path root(opt_.out_dir);
    std::error_code ec;
    for (const char* sub : {"state", "logs", "tables", "telemetry", "summary"}) {
      fs::create_directories(root / sub, ec);  // racing siblings is fine
    }
    state_dir_ = (root / "state").string();
    logs_dir_ = (root / "logs").string();
    tables_dir_ = (root / "tables").string();
    telemetry_dir_ = (root / "telemetry").string();
    summary_dir_ = (root / "summary").string();
    keyuse_file_.open(logs_dir_ + "/" + node_.id() + "_keyuse.log", std::ios::app);
    wire_file_.open(logs_dir_ + "/" + node_.id() + "_wire.log", std::ios::app);
    if (!keyuse_file_ || !wire_file_) {
      std::fprintf(stderr, "cannot open log files under %s\n", logs_dir_.c_str());
      return false;
    }

    for (uint32_t link : adjacent_links()) {
      const LinkProfile& p = profile_of(link);
      media_.emplace(link, MemoryMedium{});
      emitters_.emplace(link, LinkEmitter(p, mix_seed(sc_.seed, "link", p.link_index)));
      node_.attach_feed(link, &media_.at(link), p.delivery);
      next_cycle_k_[link] = 1;
    }

    bool resumed = node_.load_state(state_dir_) == Err::None;
    if (!resumed) {
      if (sc_.initial_pool > 0) {
        for (uint32_t link : adjacent_links()) node_.warm_start(link, sc_.initial_pool, sc_.seed);
      }
    } else {
      // The emitter side is a pure function of (profile, seed, cycle index):
      // replaying every elapsed cycle rebuilds medium content byte-identical
      // to what the restored feed watermarks expect.
      double elapsed = std::min(vnow_s(wall_now_s()), sc_.duration_s);
      for (uint32_t link : adjacent_links()) {
        const LinkProfile& p = profile_of(link);
        uint64_t done = uint64_t(std::floor(elapsed / p.cycle_period_s + 1e-9));
        for (uint64_t k = 1; k <= done; ++k) {
          double t = double(k) * p.cycle_period_s;
          CycleOutput out = emitters_.at(link).run_cycle(k, t, sc_.disturbances, media_.at(link));
          node_.on_link_cycle(link, out.skr_bps, out.qber_pct, seconds_to_ns(t));
        }
        next_cycle_k_[link] = done + 1;
      }
      double dur = sc_.duration_s;
      next_poll_k_ = uint64_t(std::floor(std::min(elapsed, dur) / sc_.poll_period_s + 1e-9)) + 1;
      next_report_k_ =
          uint64_t(std::floor(std::min(elapsed, dur) / sc_.report_period_s + 1e-9)) + 1;
    }

    if (!opt_.listen_addr.empty()) {
      sockaddr_in addr{};
      if (!parse_addr(opt_.listen_addr, addr)) {
        std::fprintf(stderr, "bad listen address: %s\n", opt_.listen_addr.c_str());
        return false;
      }
      listener_ = ::socket(AF_INET, SOCK_STREAM, 0);
      int one = 1;
      setsockopt(listener_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (listener_ < 0 || !set_nonblock(listener_) ||
          ::bind(listener_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
          ::listen(listener_, 16) != 0) {
        std::fprintf(stderr, "cannot listen on %s: %s\n", opt_.listen_addr.c_str(),
                     std::strerror(errno));
        return false;
      }
    }
    for (const auto& [peer, addr] : opt_.peer_addrs) {
      sockaddr_in sin{};
      if (!parse_addr(addr, sin)) {
        std::fprintf(stderr, "bad peer address for %s: %s\n", peer.c_str(), addr.c_str());
        return false;
      }
      dials_[peer] = Dial{addr, 0.0, 0.5, false};
    }
    return true;
  }

  // --- timers -----------------------------------------------------------------

  struct DueTick {
    double t;
    int prio;  // cycle < poll < report, mirroring the simulator's same-instant order
    uint32_t link;
    uint64_t k;
  };

  bool fire_due(double bound) {
    std::vector<DueTick> due;
    for (auto& [link, k] : next_cycle_k_) {
      double period = profile_of(link).cycle_period_s;
      while (double(k) * period <= bound + 1e-9) {
        due.push_back({double(k) * period, 0, link, k});
        ++k;
      }
    }
    while (double(next_poll_k_) * sc_.poll_period_s <= bound + 1e-9) {
      due.push_back({double(next_poll_k_) * sc_.poll_period_s, 1, 0, next_poll_k_});
      ++next_poll_k_;
    }
    while (double(next_report_k_) * sc_.report_period_s <= bound + 1e-9) {
      due.push_back({double(next_report_k_) * sc_.report_period_s, 2, 0, next_report_k_});
      ++next_report_k_;
    }
    std::stable_sort(due.begin(), due.end(), [](const DueTick& a, const DueTick& b) {
      if (a.t != b.t) return a.t < b.t;
      return a.prio < b.prio;
    });
    for (const DueTick& d : due) {
      TimeNs t = seconds_to_ns(d.t);
      if (d.prio == 0) {
        CycleOutput out =
            emitters_.at(d.link).run_cycle(d.k, d.t, sc_.disturbances, media_.at(d.link));
        node_.on_link_cycle(d.link, out.skr_bps, out.qber_pct, t);
      } else if (d.prio == 1) {
        node_.on_poll_tick(t);
      } else {
        node_.on_report_tick(t);
      }
    }
    return !due.empty();
  }

  double next_tick_vt(double bound) const {
    double next = std::numeric_limits<double>::infinity();
    for (const auto& [link, k] : next_cycle_k_) {
      double t = double(k) * profile_of(link).cycle_period_s;
      if (t <= bound + 1e-9) next = std::min(next, t);
    }
    double tp = double(next_poll_k_) * sc_.poll_period_s;
    if (tp <= bound + 1e-9) next = std::min(next, tp);
    double tr = double(next_report_k_) * sc_.report_period_s;
    if (tr <= bound + 1e-9) next = std::min(next, tr);
    return next;
  }

  // --- persistence (write-ahead of every socket flush) -------------------------

  void persist() {
    if (node_.save_state(state_dir_) != Err::None) {
      std::fprintf(stderr, "state checkpoint failed in %s\n", state_dir_.c_str());
      io_failed_ = true;
      return;
    }
    const auto& ku = node_.keyuse_log();
    for (; flushed_keyuse_ < ku.size(); ++flushed_keyuse_) keyuse_file_ << ku[flushed_keyuse_] << '\n';
    keyuse_file_.flush();
    const auto& wl = node_.wire_log();
    for (; flushed_wire_ < wl.size(); ++flushed_wire_) wire_file_ << wl[flushed_wire_] << '\n';
    wire_file_.flush();
    for (Outgoing& out : node_.take_outgoing()) route_frame(out.to, std::move(out.frame));
  }

  // --- connections ---------------------------------------------------------------

  Conn* conn_for(const std::string& peer) {
    for (auto& c : conns_) {
      if (c && c->fd >= 0 && !c->connecting && c->peer == peer) return c.get();
    }
    return nullptr;
  }

  void route_frame(const std::string& to, Bytes frame) {
    if (Conn* c = conn_for(to)) {
      c->outbuf.insert(c->outbuf.end(), frame.begin(), frame.end());
    } else {
      pending_[to].push_back(std::move(frame));
    }
  }

  void drain_pending(Conn& c) {
    auto it = pending_.find(c.peer);
    if (it == pending_.end()) return;
    for (Bytes& f : it->second) c.outbuf.insert(c.outbuf.end(), f.begin(), f.end());
    pending_.erase(it);
  }

  void close_conn(Conn& c, double wall) {
    if (c.fd >= 0) ::close(c.fd);
    c.fd = -1;
    if (c.outbound) {
      Dial& d = dials_[c.peer];
      d.connected = false;
      d.next_attempt_wall = wall + d.backoff_s;
      d.backoff_s = std::min(d.backoff_s * 2.0, kBackoffMax);
    }
  }

  bool start_dials(double wall) {
    bool mutated = false;
    for (auto& [peer, d] : dials_) {
      if (d.connected || wall < d.next_attempt_wall) continue;
      sockaddr_in sin{};
      parse_addr(d.addr, sin);  // validated at init
      int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0 || !set_nonblock(fd)) {
        if (fd >= 0) ::close(fd);
        d.next_attempt_wall = wall + d.backoff_s;
        d.backoff_s = std::min(d.backoff_s * 2.0, kBackoffMax);
        continue;
      }
      set_nodelay(fd);
      int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sin), sizeof sin);
      auto conn = std::make_unique<Conn>();
      conn->fd = fd;
      conn->outbound = true;
      conn->peer = peer;
      if (rc == 0) {
        d.connected = true;
        on_connected(*conn);
        mutated = true;  // hello bumped the send sequence
      } else if (errno == EINPROGRESS) {
        conn->connecting = true;
        d.connected = true;  // in-flight counts; failure re-schedules
      } else {
        ::close(fd);
        d.next_attempt_wall = wall + d.backoff_s;
        d.backoff_s = std::min(d.backoff_s * 2.0, kBackoffMax);
        continue;
      }
      store_conn(std::move(conn));
    }
    return mutated;
  }

  void store_conn(std::unique_ptr<Conn> c) {
    for (auto& slot : conns_) {
      if (!slot || slot->fd < 0) {
        slot = std::move(c);
        return;
      }
    }
    conns_.push_back(std::move(c));
  }

  // Dialer announces itself; the Hello also carries the first sequence the
  // listener will accept on this connection.
  void on_connected(Conn& c) {
    dials_[c.peer].backoff_s = 0.5;
    Outgoing hello = node_.make_hello(c.peer);
    c.outbuf.insert(c.outbuf.end(), hello.frame.begin(), hello.frame.end());
    drain_pending(c);
  }

  void accept_new(double wall) {
    (void)wall;
    while (true) {
      int fd = ::accept(listener_, nullptr, nullptr);
      if (fd < 0) return;
      if (!set_nonblock(fd)) {
        ::close(fd);
        continue;
      }
      set_nodelay(fd);
      auto conn = std::make_unique<Conn>();
      conn->fd = fd;
      store_conn(std::move(conn));
    }
  }

  // First frame on an inbound connection must be a Hello that authenticates
  // under one of our pre-shared keys; everything else drops the connection.
  bool identify(Conn& c, const Bytes& frame) {
    for (const auto& [peer, psk] : node_.config().psks) {
      uint64_t scratch_seq = 0;
      auto msg = decode_wire(frame, psk, scratch_seq);
      if (!msg.ok()) continue;
      const auto* hello = std::get_if<HelloMsg>(&msg.value().payload);
      if (!hello || hello->node_id != peer) continue;
      // A reconnect replaces any stale connection to the same peer.
      for (auto& other : conns_) {
        if (other && other.get() != &c && other->fd >= 0 && other->peer == peer) {
          ::close(other->fd);
          other->fd = -1;
        }
      }
      c.peer = peer;
      node_.reset_peer_seq(peer);
      return true;
    }
    return false;
  }

  // Returns false if the connection must close.
  bool consume_inbuf(Conn& c, TimeNs vns, bool& handled) {
    FrameSplit split = split_frames(c.inbuf);
    if (split.consumed > 0) c.inbuf.erase(c.inbuf.begin(), c.inbuf.begin() + split.consumed);
    for (Bytes& frame : split.frames) {
      if (c.peer.empty()) {
        if (!identify(c, frame)) return false;
        drain_pending(c);
      }
      node_.on_frame(c.peer, frame, vns);
      handled = true;
    }
    return !split.bad_length;
  }

  bool read_conn(Conn& c, TimeNs vns, bool& handled, double wall) {
    uint8_t buf[16384];
    while (true) {
      ssize_t n = ::recv(c.fd, buf, sizeof buf, 0);
      if (n > 0) {
        c.inbuf.insert(c.inbuf.end(), buf, buf + n);
        if (!consume_inbuf(c, vns, handled)) {
          close_conn(c, wall);
          return false;
        }
        continue;
      }
      if (n == 0) {
        close_conn(c, wall);
        return false;
      }
      if (errno == EAGAIN || errno == EWOULDBLOCK) return true;
      if (errno == EINTR) continue;
      close_conn(c, wall);
      return false;
    }
  }

  void flush_conn(Conn& c, double wall) {
    while (!c.outbuf.empty()) {
      ssize_t n = ::send(c.fd, c.outbuf.data(), c.outbuf.size(), MSG_NOSIGNAL);
      if (n > 0) {
        c.outbuf.erase(c.outbuf.begin(), c.outbuf.begin() + n);
        continue;
      }
      if (errno == EAGAIN || errno == EWOULDBLOCK) return;
      if (errno == EINTR) continue;
      close_conn(c, wall);
      return;
    }
  }

  // --- main loop -----------------------------------------------------------------

  void loop() {
    while (!io_failed_) {
      double wall = wall_now_s();
      double vnow = vnow_s(wall);
      double bound = std::min(vnow, sc_.duration_s);

      bool handled = fire_due(bound);

      if (vnow >= sc_.duration_s) {
        if (grace_deadline_wall_ == 0.0) grace_deadline_wall_ = wall + opt_.grace_s;
        if (wall >= grace_deadline_wall_ && !handled) break;
      }

      if (start_dials(wall)) handled = true;
      if (handled) persist();

      // Wake for the next timer, dial retry, or grace expiry.
      double next_wall = wall + 0.2;
      double nvt = next_tick_vt(sc_.duration_s);
      if (std::isfinite(nvt)) {
        next_wall = std::min(next_wall, opt_.start_epoch_s + nvt / sc_.time_compression);
      }
      for (const auto& [peer, d] : dials_) {
        if (!d.connected) next_wall = std::min(next_wall, d.next_attempt_wall);
      }
      if (grace_deadline_wall_ > 0.0) next_wall = std::min(next_wall, grace_deadline_wall_);
      int timeout_ms = int(std::clamp((next_wall - wall) * 1000.0, 0.0, 200.0));

      std::vector<pollfd> fds;
      std::vector<Conn*> fd_conns;
      if (listener_ >= 0) {
        fds.push_back({listener_, POLLIN, 0});
        fd_conns.push_back(nullptr);
      }
      for (auto& c : conns_) {
        if (!c || c->fd < 0) continue;
        short ev = POLLIN;
        if (c->connecting || !c->outbuf.empty()) ev |= POLLOUT;
        fds.push_back({c->fd, ev, 0});
        fd_conns.push_back(c.get());
      }

      int rc = ::poll(fds.data(), nfds_t(fds.size()), timeout_ms);
      if (rc < 0) {
        if (errno == EINTR) continue;
        std::fprintf(stderr, "poll: %s\n", std::strerror(errno));
        io_failed_ = true;
        break;
      }

      wall = wall_now_s();
      TimeNs vns = seconds_to_ns(vnow_s(wall));
      bool frame_handled = false;
      for (size_t i = 0; i < fds.size(); ++i) {
        if (fds[i].revents == 0) continue;
        if (!fd_conns[i]) {
          accept_new(wall);
          continue;
        }
        Conn& c = *fd_conns[i];
        if (c.fd < 0) continue;  // closed earlier this pass
        if (c.connecting && (fds[i].revents & (POLLOUT | POLLERR | POLLHUP))) {
          int soerr = 0;
          socklen_t len = sizeof soerr;
          getsockopt(c.fd, SOL_SOCKET, SO_ERROR, &soerr, &len);
          if (soerr != 0) {
            close_conn(c, wall);
            continue;
          }
          c.connecting = false;
          on_connected(c);
          frame_handled = true;  // hello bumped the send sequence
          continue;
        }
        if (fds[i].revents & (POLLERR | POLLHUP)) {
          // Drain anything readable before closing.
          if (fds[i].revents & POLLIN) read_conn(c, vns, frame_handled, wall);
          if (c.fd >= 0) close_conn(c, wall);
          continue;
        }
        if (fds[i].revents & POLLIN) {
          if (!read_conn(c, vns, frame_handled, wall)) continue;
        }
        if (fds[i].revents & POLLOUT) flush_conn(c, wall);
      }

      if (frame_handled) persist();
      for (auto& c : conns_) {
        if (c && c->fd >= 0 && !c->connecting && !c->outbuf.empty()) flush_conn(*c, wall);
      }
    }
  }

  void finalize() {
    persist();
    std::string base = tables_dir_ + "/" + node_.id();
    node_.nk_table().save(base + "_nk.qkt");
    for (uint32_t link : adjacent_links()) {
      node_.link_table(link)->save(base + "_qk" + std::to_string(link) + ".qkt");
    }
    std::ofstream lp(telemetry_dir_ + "/" + node_.id() + ".lp", std::ios::trunc);
    lp << node_.telemetry().export_lines();

    nlohmann::json j;
    j["node"] = node_.id();
    j["role"] = role_name(node_.role());
    j["transfers_completed"] = node_.transfers_completed();
    j["nk_delivered"] = node_.nk_delivered();
    j["keys_failed"] = node_.keys_failed();
    nlohmann::json triggers = nlohmann::json::array();
    for (const auto& t : node_.triggers()) {
      triggers.push_back({{"time_ns", t.time}, {"batch_id", t.batch_id}, {"h", t.h}});
    }
    j["triggers"] = triggers;
    j["network_keys"] = {{"count", node_.nk_table().record_count()},
                         {"digest", to_hex32(node_.nk_table().content_digest())}};
    const NodeCounters& c = node_.counters();
    j["counters"] = {{"frames_sent", c.frames_sent},
                     {"frames_received", c.frames_received},
                     {"bad_auth", c.bad_auth},
                     {"stale_seq", c.stale_seq},
                     {"bad_frames", c.bad_frames},
                     {"relay_errors_seen", c.relay_errors_seen},
                     {"batches_timed_out", c.batches_timed_out},
                     {"hops_dropped", c.hops_dropped}};
    std::ofstream sf(summary_dir_ + "/" + node_.id() + ".json", std::ios::trunc);
    sf << j.dump(2) << "\n";
  }
};

}  // namespace

Expected<RealNodeOptions> load_real_node_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) return Err::Io;
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) return Err::BadFormat;
  if (!j.contains("scenario") || !j.contains("node") || !j.contains("out")) return Err::BadFormat;

  ScenarioLoad loaded = resolve_scenario(j.value("scenario", std::string{}));
  if (!loaded.scenario) return Err::BadFormat;
  RealNodeOptions opt;
  opt.scenario = std::move(*loaded.scenario);
  if (j.contains("seed")) opt.scenario.seed = j.value("seed", uint64_t{1});
  if (j.contains("duration_s")) opt.scenario.duration_s = j.value("duration_s", 0.0);
  if (j.contains("compress")) opt.scenario.time_compression = j.value("compress", 1.0);

  std::string node_id = j.value("node", std::string{});
  bool found = false;
  for (size_t i = 0; i < opt.scenario.nodes.size(); ++i) {
    if (opt.scenario.nodes[i].node_id == node_id) {
      opt.node_index = i;
      found = true;
      break;
    }
  }
  if (!found) return Err::BadFormat;

  opt.listen_addr = j.value("listen", std::string{});
  if (j.contains("peers")) {
    for (const auto& [peer, addr] : j["peers"].items()) {
      if (!addr.is_string()) return Err::BadFormat;
      opt.peer_addrs[peer] = addr.get<std::string>();
    }
  }
  opt.out_dir = j.value("out", std::string{});
  opt.start_epoch_s = j.value("start_epoch", wall_now_s());
  opt.grace_s = j.value("grace_s", 2.0);
  return opt;
}

int run_real_node(const RealNodeOptions& opt) {
  auto errors = opt.scenario.validate();
  if (!errors.empty()) {
    for (const auto& e : errors) std::fprintf(stderr, "scenario: %s\n", e.c_str());
    return 1;
  }
  if (opt.node_index >= opt.scenario.nodes.size() || opt.out_dir.empty()) {
    std::fprintf(stderr, "bad node index or missing output directory\n");
    return 1;
  }
  RealNode rn(opt);
  return rn.run();
}

}  // namespace qkdnet
