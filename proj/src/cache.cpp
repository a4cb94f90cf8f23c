#include "mineqa/cache.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mineqa/digest.hpp"
#include "mineqa/errors.hpp"

namespace mineqa {

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

std::filesystem::path entry_path(const std::filesystem::path& dir, const std::string& key) {
    return dir / (key + ".jsonl");
}

}  // namespace

std::string canonical_request_json(const CompletionRequest& request) {
    jsonl::Json obj;
    obj["model_id"] = request.model_id;
    jsonl::Json messages = jsonl::Json::array();
    for (const auto& msg : request.messages) {
        messages.push_back({{"role", to_string(msg.role)}, {"content", msg.content}});
    }
    obj["messages"] = std::move(messages);
    obj["temperature"] = request.temperature;
    obj["max_tokens"] = request.max_tokens;
    obj["seed"] = request.seed ? jsonl::Json(*request.seed) : jsonl::Json(nullptr);
    return obj.dump();
}

std::string cache_key(const CompletionRequest& request) {
    request.validate();
    return sha256_hex(canonical_request_json(request));
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) {
        throw ValidationError("cannot create cache directory " + dir_.string() + ": " +
                              ec.message());
    }
}

std::optional<ChatMessage> ResponseCache::lookup(const std::string& key) const {
    const auto path = entry_path(dir_, key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec) || ec) return std::nullopt;

    std::ifstream in(path, std::ios::binary);
    if (!in) {
        warn("cache read failed for " + key + "; treating as miss");
        return std::nullopt;
    }
    std::string message_line;
    if (!std::getline(in, message_line)) {
        warn("cache entry " + key + " is empty; treating as miss");
        return std::nullopt;
    }
    auto parsed = jsonl::Json::parse(message_line, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() || parsed.value("role", "") != "assistant" ||
        !parsed.contains("content") || !parsed["content"].is_string() ||
        parsed["content"].get<std::string>().empty()) {
        warn("cache entry " + key + " is corrupt; treating as miss");
        return std::nullopt;
    }
    return ChatMessage{Role::assistant, parsed["content"].get<std::string>()};
}

void ResponseCache::store(const std::string& key, const CompletionRequest& request,
                          const ChatMessage& response) const {
    static std::atomic<unsigned long long> tmp_counter{0};
    const auto path = entry_path(dir_, key);
    const auto tmp = path.string() + ".tmp" + std::to_string(tmp_counter.fetch_add(1));

    jsonl::Json message{{"role", to_string(response.role)}, {"content", response.content}};
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
        warn("cache write failed for " + key);
        return;
    }
    out << message.dump() << '\n' << canonical_request_json(request) << '\n';
    out.close();
    if (!out) {
        warn("cache write failed for " + key);
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        return;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        warn("cache rename failed for " + key + ": " + ec.message());
        std::filesystem::remove(tmp, ec);
    }
}

CompletionOutcome cached_complete(BackendHandle& backend, const ResponseCache* cache,
                                  const CompletionRequest& request) {
    request.validate();
    if (cache) {
        const std::string key = cache_key(request);
        if (auto stored = cache->lookup(key)) {
            return {*stored, true};
        }
        ChatMessage fresh = backend.complete(request);
        cache->store(key, request, fresh);
        return {fresh, false};
    }
    return {backend.complete(request), false};
}

}  // namespace mineqa
