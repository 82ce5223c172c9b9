#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedforge/edge_client.hpp"
#include "fedforge/fedavg.hpp"
#include "fedforge/nas.hpp"

namespace fedforge::server {

/// Runs clients in the calling thread but still pushes every message through
/// the text/binary frame codec, so the bytes match a networked run.
class InProcessTransport : public ClientTransport, public nas::SearchTransport {
 public:
  /// Clients are borrowed and must outlive the transport.
  void add_client(client::EdgeClient& c);
  sched::ClientRoster roster() const;

  std::vector<ClientReply> train_round(const TrainDispatch& dispatch, const std::vector<std::string>& clientIds,
                                       std::chrono::milliseconds deadline) override;
  config::DataConfig request_data_config(const std::string& taskId, const std::string& clientId) override;
  std::vector<std::pair<std::string, nas::CandidateResult>> explore(const std::vector<nas::Assignment>& jobs,
                                                                    const nas::SearchConfig& cfg) override;

  /// Sees every frame in either direction; used to audit what leaves a client.
  using Tap = std::function<void(const std::string& clientId, bool toServer, const protocol::Frame&)>;
  void set_tap(Tap tap) { tap_ = std::move(tap); }

  /// Clients listed here never answer (simulated disconnects).
  void set_offline(std::vector<std::string> ids) { offline_ = std::move(ids); }

 private:
  std::vector<protocol::Envelope> exchange(const std::string& clientId, std::vector<protocol::Envelope> out);

  std::map<std::string, client::EdgeClient*> clients_;
  Tap tap_;
  std::vector<std::string> offline_;
};

}  // namespace fedforge::server
