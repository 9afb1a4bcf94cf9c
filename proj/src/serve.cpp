#include "roadprompt/serve.hpp"

#include <httplib.h>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <sstream>

namespace roadprompt {

using nlohmann::json;

const char* to_string(MaskKind k) {
    switch (k) {
    case MaskKind::automatic: return "auto";
    case MaskKind::highrecall: return "highrecall";
    case MaskKind::stage2: return "stage2";
    case MaskKind::stage3: return "stage3";
    case MaskKind::final: return "final";
    }
    return "?";
}

MaskKind mask_kind_from_string(const std::string& s) {
    for (MaskKind k : {MaskKind::automatic, MaskKind::highrecall, MaskKind::stage2, MaskKind::stage3, MaskKind::final}) {
        if (s == to_string(k)) return k;
    }
    throw InvalidArgument("unknown mask selector '" + s + "' (expected auto, highrecall, stage2, stage3 or final)");
}

PromptBatch accumulate_history(const std::vector<PromptDelta>& history) {
    PromptBatch acc;
    for (const PromptDelta& d : history) {
        if (d.reset) acc = {};
        acc.positives.insert(acc.positives.end(), d.prompts.positives.begin(), d.prompts.positives.end());
        acc.negatives.insert(acc.negatives.end(), d.prompts.negatives.begin(), d.prompts.negatives.end());
    }
    return acc;
}

SessionStore::SessionStore(std::shared_ptr<const RoadModel> model, SessionConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)), id_rng_(cfg_.seed) {}

std::string SessionStore::next_id() {
    for (;;) {
        std::array<char, 33> buf{};
        std::snprintf(buf.data(), buf.size(), "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                      static_cast<unsigned long long>(id_rng_()));
        std::string id(buf.data());
        if (!sessions_.count(id)) return id;
    }
}

SessionStore::Session& SessionStore::find(const std::string& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("no session '" + id + "'");
    it->second.last_access = cfg_.now();
    return it->second;
}

void SessionStore::replay(Session& s) {
    const PromptBatch acc = accumulate_history(s.history);
    const FusionStrategy strategy = s.history.empty() ? cfg_.default_strategy : s.history.back().strategy;
    s.current = roadprompt::refine(s.embedding, s.auto_mask, s.highrecall_mask, acc, *model_, strategy, cfg_.threshold);
}

SessionView SessionStore::make_view(const std::string& id, const Session& s) const {
    SessionView v;
    v.id = id;
    v.result = s.current;
    v.grid = model_->grid_for(s.auto_mask.height(), s.auto_mask.width());
    v.history_length = s.history.size();
    return v;
}

SessionView SessionStore::create(const Image& image) {
    if (!model_) throw std::runtime_error("no model loaded");
    if (image.height <= 0 || image.width <= 0) throw BadUpload("empty image");
    if (image.height > cfg_.max_side || image.width > cfg_.max_side) {
        throw BadUpload("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                        " exceeds the " + std::to_string(cfg_.max_side) + " pixel side limit");
    }
    std::lock_guard lock(mutex_);
    Session s;
    Stage1Result st = stage1(image, *model_, cfg_.threshold);
    s.encoder_runs = 1;
    s.embedding = std::move(st.embedding);
    s.auto_mask = std::move(st.auto_mask);
    s.highrecall_mask = std::move(st.highrecall_mask);
    s.last_access = cfg_.now();
    replay(s);
    const std::string id = next_id();
    auto [it, _] = sessions_.emplace(id, std::move(s));
    return make_view(id, it->second);
}

SessionView SessionStore::create_from_png(const std::vector<std::uint8_t>& bytes) {
    Raster r;
    try {
        r = decode_png(bytes);
    } catch (const RasterError& e) {
        throw BadUpload(std::string("undecodable image: ") + e.what());
    }
    if (r.height > cfg_.max_side || r.width > cfg_.max_side) {
        throw BadUpload("image " + std::to_string(r.height) + "x" + std::to_string(r.width) + " exceeds the " +
                        std::to_string(cfg_.max_side) + " pixel side limit");
    }
    return create(image_from_raster(r));
}

SessionView SessionStore::refine(const std::string& id, const PromptBatch& delta, std::optional<FusionStrategy> strategy,
                                 bool reset) {
    std::lock_guard lock(mutex_);
    Session& s = find(id);
    const int h = s.auto_mask.height();
    const int w = s.auto_mask.width();
    for (const auto* list : {&delta.positives, &delta.negatives}) {
        for (const PointPrompt& p : *list) require_in_bounds(p, h, w);
    }
    for (const PointPrompt& p : delta.positives) {
        if (p.polarity != Polarity::positive) throw InvalidArgument("negative point in the positive list");
    }
    for (const PointPrompt& p : delta.negatives) {
        if (p.polarity != Polarity::negative) throw InvalidArgument("positive point in the negative list");
    }
    PromptDelta d;
    d.prompts = delta;
    d.reset = reset;
    d.strategy = strategy.value_or(s.history.empty() ? cfg_.default_strategy : s.history.back().strategy);
    s.history.push_back(d);
    try {
        replay(s);
    } catch (...) {
        s.history.pop_back();
        replay(s);
        throw;
    }
    SessionView v = make_view(id, s);
    for (const auto* list : {&delta.negatives, &delta.positives}) {
        if (list->empty()) continue;
        const Polarity pol = list->front().polarity;
        for (PatchIndex idx : patches_of(*list, v.grid)) v.affected.push_back({idx, patch_pixels(idx, v.grid), pol});
    }
    return v;
}

SessionView SessionStore::undo(const std::string& id) {
    std::lock_guard lock(mutex_);
    Session& s = find(id);
    if (s.history.empty()) {
        SessionView v = make_view(id, s);
        v.noop = true;
        return v;
    }
    s.history.pop_back();
    replay(s);
    return make_view(id, s);
}

SessionView SessionStore::view(const std::string& id) {
    std::lock_guard lock(mutex_);
    return make_view(id, find(id));
}

BinaryMask SessionStore::mask(const std::string& id, MaskKind which) {
    std::lock_guard lock(mutex_);
    const StageResult& r = find(id).current;
    switch (which) {
    case MaskKind::automatic: return r.auto_mask;
    case MaskKind::highrecall: return r.highrecall_mask;
    case MaskKind::stage2: return r.stage2_mask;
    case MaskKind::stage3: return r.stage3_mask;
    case MaskKind::final: return r.final_mask;
    }
    return r.final_mask;
}

bool SessionStore::erase(const std::string& id) {
    std::lock_guard lock(mutex_);
    return sessions_.erase(id) > 0;
}

std::int64_t SessionStore::encoder_runs(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("no session '" + id + "'");
    return it->second.encoder_runs;
}

std::size_t SessionStore::size() {
    std::lock_guard lock(mutex_);
    return sessions_.size();
}

std::size_t SessionStore::expire_idle() {
    std::lock_guard lock(mutex_);
    const auto now = cfg_.now();
    std::size_t dropped = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (now - it->second.last_access > cfg_.idle_timeout) {
            it = sessions_.erase(it);
            ++dropped;
        } else {
            ++it;
        }
    }
    return dropped;
}

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

} // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += kB64[v & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += kB64[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    std::size_t pad = 0;
    for (char c : text) {
        if (c == '=') {
            ++pad;
            continue;
        }
        if (c == '\n' || c == '\r' || c == ' ') continue;
        const int v = b64_value(c);
        if (v < 0 || pad > 0) throw InvalidArgument("malformed base64");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    if (pad > 2) throw InvalidArgument("malformed base64");
    return out;
}

namespace {

std::string mask_png_b64(const BinaryMask& m) { return base64_encode(encode_png(raster_from_mask(m))); }

json rect_json(const PixelRect& r) {
    return {{"row_begin", r.row_begin}, {"row_end", r.row_end}, {"col_begin", r.col_begin}, {"col_end", r.col_end}};
}

json view_json(const SessionView& v) {
    const StageResult& r = v.result;
    json masks = {{"auto", mask_png_b64(r.auto_mask)},     {"highrecall", mask_png_b64(r.highrecall_mask)},
                  {"stage2", mask_png_b64(r.stage2_mask)}, {"stage3", mask_png_b64(r.stage3_mask)},
                  {"final", mask_png_b64(r.final_mask)}};
    json affected = json::array();
    for (const AffectedPatch& a : v.affected) {
        affected.push_back({{"patch", {a.patch.i, a.patch.j}}, {"rect", rect_json(a.rect)}, {"polarity", to_string(a.polarity)}});
    }
    return {{"id", v.id},
            {"height", r.auto_mask.height()},
            {"width", r.auto_mask.width()},
            {"patch_grid",
             {{"patch_h", v.grid.patch_h()}, {"patch_w", v.grid.patch_w()}, {"rows", v.grid.rows()}, {"cols", v.grid.cols()}}},
            {"strategy", to_string(r.strategy)},
            {"history_length", v.history_length},
            {"affected_patches", affected},
            {"noop", v.noop},
            {"masks", masks}};
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) { send_json(res, status, {{"error", msg}}); }

std::vector<PointPrompt> parse_points(const json& body, const char* key, Polarity pol) {
    std::vector<PointPrompt> out;
    if (!body.contains(key)) return out;
    const json& arr = body.at(key);
    if (!arr.is_array()) throw InvalidArgument(std::string("'") + key + "' must be an array of [row, col]");
    for (const json& p : arr) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer()) {
            throw InvalidArgument(std::string("'") + key + "' entries must be [row, col] integer pairs");
        }
        out.push_back({p[0].get<int>(), p[1].get<int>(), pol});
    }
    return out;
}

// Maps store exceptions onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const SessionNotFound& e) {
        send_error(res, 404, e.what());
    } catch (const BadUpload& e) {
        const std::string msg = e.what();
        send_error(res, msg.find("exceeds") != std::string::npos ? 413 : 400, msg);
    } catch (const json::exception& e) {
        send_error(res, 400, std::string("bad JSON: ") + e.what());
    } catch (const std::invalid_argument& e) {
        send_error(res, 400, e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

} // namespace

void install_routes(httplib::Server& server, SessionStore& store) {
    server.Get("/healthz", [&store](const httplib::Request&, httplib::Response& res) {
        store.expire_idle();
        send_json(res, store.has_model() ? 200 : 503,
                  {{"status", store.has_model() ? "ok" : "no model"}, {"sessions", store.size()}});
    });

    server.Post("/sessions", [&store](const httplib::Request& req, httplib::Response& res) {
        if (!store.has_model()) return send_error(res, 503, "no model loaded");
        guarded(res, [&] {
            store.expire_idle();
            std::string payload;
            if (req.has_file("image")) {
                payload = req.get_file_value("image").content;
            } else {
                payload = req.body;
            }
            if (payload.empty()) throw BadUpload("missing image upload (multipart field 'image' or PNG body)");
            const std::vector<std::uint8_t> bytes(payload.begin(), payload.end());
            send_json(res, 201, view_json(store.create_from_png(bytes)));
        });
    });

    server.Post(R"(/sessions/([0-9a-f]+)/refine)", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json body = req.body.empty() ? json::object() : json::parse(req.body);
            if (!body.is_object()) throw InvalidArgument("refine body must be a JSON object");
            PromptBatch delta;
            delta.positives = parse_points(body, "positives", Polarity::positive);
            delta.negatives = parse_points(body, "negatives", Polarity::negative);
            std::optional<FusionStrategy> strategy;
            if (body.contains("strategy") && !body["strategy"].is_null()) {
                strategy = fusion_from_string(body["strategy"].get<std::string>());
            }
            const bool reset = body.value("reset", false);
            send_json(res, 200, view_json(store.refine(req.matches[1], delta, strategy, reset)));
        });
    });

    server.Post(R"(/sessions/([0-9a-f]+)/undo)", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, view_json(store.undo(req.matches[1]))); });
    });

    server.Get(R"(/sessions/([0-9a-f]+))", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, view_json(store.view(req.matches[1]))); });
    });

    server.Get(R"(/sessions/([0-9a-f]+)/masks/(\w+))", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const MaskKind which = mask_kind_from_string(req.matches[2]);
            const std::vector<std::uint8_t> png = encode_png(raster_from_mask(store.mask(req.matches[1], which)));
            res.status = 200;
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        });
    });

    server.Delete(R"(/sessions/([0-9a-f]+))", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            if (!store.erase(req.matches[1])) throw SessionNotFound("no session '" + std::string(req.matches[1]) + "'");
            send_json(res, 200, {{"deleted", std::string(req.matches[1])}});
        });
    });
}

bool serve(SessionStore& store, const std::string& host, int port) {
    httplib::Server server;
    // Uploads beyond max_side^2 RGB plus headroom are refused by the transport.
    const std::size_t side = static_cast<std::size_t>(store.config().max_side);
    server.set_payload_max_length(side * side * 4 + (1u << 20));
    install_routes(server, store);
    return server.listen(host, port);
}

} // namespace roadprompt
