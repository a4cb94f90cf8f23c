#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mineqa/backend.hpp"

namespace mineqa {

// Canonical JSON encoding of a request: the string that is digested for
// cache_key and stored verbatim as the request echo in cache entries.
std::string canonical_request_json(const CompletionRequest& request);

// Stable content digest over (model_id, message roles and contents,
// temperature, max_tokens, seed). Equal requests yield equal keys.
std::string cache_key(const CompletionRequest& request);

// Persistent content-addressed store: one file per digest, holding the
// assistant message followed by the request echo, one object per line.
// Read/write failures and corrupt entries degrade to misses with a warning,
// never to wrong data. Safe for concurrent use on distinct keys; same-key
// writers race benignly (atomic rename, last write wins).
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<ChatMessage> lookup(const std::string& key) const;
    void store(const std::string& key, const CompletionRequest& request,
               const ChatMessage& response) const;

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

struct CompletionOutcome {
    ChatMessage message;
    bool cache_hit = false;
};

// On hit returns the stored message without contacting the backend; on miss
// delegates to BackendHandle::complete and stores the result.
CompletionOutcome cached_complete(BackendHandle& backend, const ResponseCache* cache,
                                  const CompletionRequest& request);

// Binds one backend (plus optional cache) for a grid cell and keeps the
// cell-level counters the run manifest reports.
class CompletionClient {
public:
    CompletionClient(BackendHandle& backend, const ResponseCache* cache)
        : backend_(&backend), cache_(cache) {}

    ChatMessage complete(const CompletionRequest& request) {
        CompletionOutcome outcome = cached_complete(*backend_, cache_, request);
        ++requests_;
        if (outcome.cache_hit) {
            ++cache_hits_;
        } else {
            ++backend_calls_;
        }
        return outcome.message;
    }

    const std::string& backend_name() const { return backend_->spec().name; }
    const std::string& model_id() const { return backend_->spec().model_id; }

    long long requests() const { return requests_; }
    long long cache_hits() const { return cache_hits_; }
    long long backend_calls() const { return backend_calls_; }

private:
    BackendHandle* backend_;
    const ResponseCache* cache_;
    long long requests_ = 0;
    long long cache_hits_ = 0;
    long long backend_calls_ = 0;
};

}  // namespace mineqa
