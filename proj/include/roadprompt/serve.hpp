#pragma once

// Interactive refinement sessions and their HTTP front end.

#include "roadprompt/pipeline.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace roadprompt {

class SessionNotFound : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Refused upload (undecodable or too large); maps to a 4xx.
class BadUpload : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class MaskKind : std::uint8_t { automatic, highrecall, stage2, stage3, final };
const char* to_string(MaskKind k);
MaskKind mask_kind_from_string(const std::string& s);

struct SessionConfig {
    std::chrono::seconds idle_timeout{30 * 60};
    int max_side = 2048;
    FusionStrategy default_strategy = FusionStrategy::sum;
    double threshold = kDefaultThreshold;
    std::uint64_t seed = 0; // session-id generator
    /// Injectable clock for expiry tests.
    std::function<std::chrono::steady_clock::time_point()> now = [] { return std::chrono::steady_clock::now(); };
};

/// One refine call as recorded in the history.
struct PromptDelta {
    PromptBatch prompts;
    bool reset = false;
    FusionStrategy strategy = FusionStrategy::sum;
};

struct AffectedPatch {
    PatchIndex patch;
    PixelRect rect;
    Polarity polarity = Polarity::positive;
};

struct SessionView {
    std::string id;
    StageResult result;
    PatchGrid grid{1, 1, 1, 1};
    std::size_t history_length = 0;
    /// Patches touched by the prompts of the call that produced this view.
    std::vector<AffectedPatch> affected;
    /// Set by undo when there was nothing to pop.
    bool noop = false;
};

/// In-memory sessions over a shared read-only model. Each session encodes its
/// image once and replays its prompt history from the cached embedding.
class SessionStore {
  public:
    SessionStore(std::shared_ptr<const RoadModel> model, SessionConfig cfg = {});

    SessionView create(const Image& image);
    /// Decodes an uploaded raster first; rejects corrupt or oversized input.
    SessionView create_from_png(const std::vector<std::uint8_t>& bytes);
    /// Appends a delta (or replaces the history when `reset`) and re-decodes
    /// with the accumulated prompts. Out-of-bounds points are rejected before
    /// anything is recorded.
    SessionView refine(const std::string& id, const PromptBatch& delta, std::optional<FusionStrategy> strategy = {},
                       bool reset = false);
    SessionView undo(const std::string& id);
    SessionView view(const std::string& id);
    BinaryMask mask(const std::string& id, MaskKind which);
    bool erase(const std::string& id);

    /// Encoder runs attributed to this session (1 for every live session).
    std::int64_t encoder_runs(const std::string& id);
    std::size_t size();
    /// Drops sessions idle for longer than the timeout; returns how many.
    std::size_t expire_idle();
    const SessionConfig& config() const { return cfg_; }
    bool has_model() const { return model_ != nullptr; }

  private:
    struct Session {
        ImageEmbedding embedding;
        BinaryMask auto_mask;
        BinaryMask highrecall_mask;
        std::vector<PromptDelta> history;
        StageResult current;
        std::int64_t encoder_runs = 0;
        std::chrono::steady_clock::time_point last_access;
    };

    Session& find(const std::string& id);
    void replay(Session& s);
    SessionView make_view(const std::string& id, const Session& s) const;
    std::string next_id();

    std::shared_ptr<const RoadModel> model_;
    SessionConfig cfg_;
    std::mutex mutex_; // sessions and the single inference queue
    std::map<std::string, Session> sessions_;
    Rng id_rng_;
};

/// Prompts accumulated over a history, honoring reset markers.
PromptBatch accumulate_history(const std::vector<PromptDelta>& history);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Routes:
///   POST /sessions                    multipart field "image" or raw PNG body
///   POST /sessions/{id}/refine        {"positives": [[r,c]...], "negatives": [...], "strategy", "reset"}
///   POST /sessions/{id}/undo
///   GET  /sessions/{id}/masks/{which} single-channel 0/255 PNG
///   DELETE /sessions/{id}
///   GET  /healthz
void install_routes(httplib::Server& server, SessionStore& store);

/// Blocks until the server stops.
bool serve(SessionStore& store, const std::string& host, int port);

} // namespace roadprompt
