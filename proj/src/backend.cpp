#include "mineqa/backend.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "httplib.h"
#include "mineqa/digest.hpp"
#include "mineqa/errors.hpp"

namespace mineqa {

namespace {

std::string trim_trailing(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

double jitter_draw() {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

struct SemaphoreGuard {
    explicit SemaphoreGuard(std::counting_semaphore<>* sem) : sem_(sem) {
        if (sem_) sem_->acquire();
    }
    ~SemaphoreGuard() {
        if (sem_) sem_->release();
    }
    SemaphoreGuard(const SemaphoreGuard&) = delete;
    SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

    std::counting_semaphore<>* sem_;
};

struct UrlParts {
    std::string scheme_host;  // e.g. "http://127.0.0.1:8080"
    std::string path;         // e.g. "/v1/chat/completions"
};

UrlParts split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ValidationError("endpoint \"" + url + "\" is not an absolute URL");
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

HttpResponse default_transport(const std::string& url, const std::string& auth_header_name,
                               const std::string& auth_header_value, const std::string& body) {
    UrlParts parts = split_url(url);
    httplib::Client client(parts.scheme_host);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(120, 0);

    httplib::Headers headers;
    if (!auth_header_name.empty()) {
        headers.emplace(auth_header_name, auth_header_value);
    }
    auto result = client.Post(parts.path, headers, body, "application/json");
    if (!result) {
        return {0, httplib::to_string(result.error())};
    }
    return {result->status, result->body};
}

bool is_transient_status(int status) {
    // 0 = connection-level failure reported by the transport.
    return status == 0 || status == 408 || status == 429 || (status >= 500 && status <= 599);
}

}  // namespace

std::string to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "?";
}

Role role_from_string(const std::string& s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw ValidationError("unknown role \"" + s + "\"");
}

void CompletionRequest::validate() const {
    if (messages.empty()) {
        throw ValidationError("request has no messages");
    }
    if (messages.back().role != Role::user) {
        throw ValidationError("last request message must have role user");
    }
    for (const auto& msg : messages) {
        if (msg.role != Role::system && msg.content.empty()) {
            throw ValidationError("request contains an empty " + to_string(msg.role) +
                                  " message");
        }
    }
    if (!(temperature >= 0.0 && temperature <= 2.0)) {
        throw ValidationError("temperature must be in [0, 2]");
    }
    if (max_tokens <= 0) {
        throw ValidationError("max_tokens must be positive");
    }
}

void BackendSpec::validate() const {
    if (name.empty()) {
        throw ValidationError("backend name is empty");
    }
    if (max_in_flight <= 0) {
        throw ValidationError("backend \"" + name + "\": max_in_flight must be positive");
    }
    if (retry.max_attempts <= 0) {
        throw ValidationError("backend \"" + name + "\": retry.max_attempts must be positive");
    }
    if (kind == BackendKind::http) {
        if (endpoint.empty() || credential_env.empty()) {
            throw ValidationError("backend \"" + name +
                                  "\": http backends need endpoint and credential_env");
        }
    } else {
        if (fixture_path.empty()) {
            throw ValidationError("backend \"" + name + "\": mock backends need fixture_path");
        }
    }
}

void MockFixture::validate() const {
    if (rules.empty() && fallback != MockFallback::echo) {
        throw ValidationError("mock fixture with no rules must use fallback=echo");
    }
}

MockFixture load_mock_fixture(const std::filesystem::path& path) {
    auto lines = jsonl::read_file(path);
    if (lines.empty()) {
        throw ValidationError(path.string() + ": missing fixture header object");
    }

    MockFixture fixture;
    const auto& header = lines.front().value;
    auto fb = header.find("fallback");
    if (fb == header.end() || !fb->is_string()) {
        throw ValidationError(path.string() + ":" + std::to_string(lines.front().number) +
                              ": header must carry a \"fallback\" string");
    }
    if (*fb == "echo") {
        fixture.fallback = MockFallback::echo;
    } else if (*fb == "error") {
        fixture.fallback = MockFallback::error;
    } else {
        throw ValidationError(path.string() + ": unknown fallback \"" +
                              fb->get<std::string>() + "\"");
    }

    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto& obj = lines[i].value;
        const std::string where = path.string() + ":" + std::to_string(lines[i].number);
        MockRule rule;
        auto match = obj.find("match");
        if (match == obj.end() || !match->is_string()) {
            throw ValidationError(where + ": rule needs a \"match\" string");
        }
        if (*match == "exact") {
            rule.match = MockMatch::exact;
        } else if (*match == "substring") {
            rule.match = MockMatch::substring;
        } else {
            throw ValidationError(where + ": unknown match kind \"" +
                                  match->get<std::string>() + "\"");
        }
        auto pattern = obj.find("pattern");
        auto response = obj.find("response");
        if (pattern == obj.end() || !pattern->is_string() || response == obj.end() ||
            !response->is_string()) {
            throw ValidationError(where + ": rule needs \"pattern\" and \"response\" strings");
        }
        rule.pattern = pattern->get<std::string>();
        rule.response = response->get<std::string>();
        fixture.rules.push_back(std::move(rule));
    }

    fixture.validate();
    return fixture;
}

std::string echo_response_content(const std::string& final_user_message) {
    return "ECHO:" + sha256_hex(final_user_message);
}

ChatMessage mock_complete(const MockFixture& fixture, const CompletionRequest& request) {
    request.validate();
    const std::string& prompt = request.messages.back().content;

    for (const auto& rule : fixture.rules) {
        const bool hit = rule.match == MockMatch::exact
                             ? trim_trailing(prompt) == trim_trailing(rule.pattern)
                             : prompt.find(rule.pattern) != std::string::npos;
        if (hit) {
            return {Role::assistant, rule.response};
        }
    }
    if (fixture.fallback == MockFallback::echo) {
        return {Role::assistant, echo_response_content(prompt)};
    }
    throw BackendError(BackendError::Kind::malformed,
                       "mock fixture has no rule matching the final user message");
}

std::chrono::milliseconds retry_delay(const RetryPolicy& policy, int attempt, double jitter01) {
    const double base = static_cast<double>(policy.base_delay.count());
    const double cap = static_cast<double>(policy.max_delay.count());
    const double raw = base * std::pow(2.0, std::min(attempt, 30));
    if (raw >= cap) {
        return policy.max_delay;
    }
    // Jitter up to half the current step keeps the sequence non-decreasing:
    // raw_k * 1.5 < raw_{k+1}.
    const double jittered = raw + 0.5 * raw * std::clamp(jitter01, 0.0, 1.0);
    return std::chrono::milliseconds(
        static_cast<long long>(std::min(jittered, cap)));
}

WireShape wire_shape_for(const std::string& backend_name) {
    std::string lower = backend_name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return lower.find("claude") != std::string::npos ? WireShape::anthropic_messages
                                                     : WireShape::openai_chat;
}

jsonl::Json encode_request(WireShape shape, const CompletionRequest& request) {
    jsonl::Json body;
    body["model"] = request.model_id;
    if (shape == WireShape::openai_chat) {
        jsonl::Json messages = jsonl::Json::array();
        for (const auto& msg : request.messages) {
            messages.push_back({{"role", to_string(msg.role)}, {"content", msg.content}});
        }
        body["messages"] = std::move(messages);
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
        if (request.seed) body["seed"] = *request.seed;
    } else {
        std::string system;
        jsonl::Json messages = jsonl::Json::array();
        for (const auto& msg : request.messages) {
            if (msg.role == Role::system) {
                if (!system.empty()) system += "\n";
                system += msg.content;
            } else {
                messages.push_back({{"role", to_string(msg.role)}, {"content", msg.content}});
            }
        }
        if (!system.empty()) body["system"] = system;
        body["messages"] = std::move(messages);
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
    }
    return body;
}

ChatMessage decode_response(WireShape shape, const std::string& body) {
    auto parsed = jsonl::Json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
        throw BackendError(BackendError::Kind::malformed, "backend response is not JSON");
    }

    std::string content;
    if (shape == WireShape::openai_chat) {
        auto choices = parsed.find("choices");
        if (choices == parsed.end() || !choices->is_array() || choices->empty()) {
            throw BackendError(BackendError::Kind::malformed,
                               "backend response has no choices");
        }
        const auto& message = (*choices)[0].value("message", jsonl::Json::object());
        if (!message.contains("content") || !message["content"].is_string()) {
            throw BackendError(BackendError::Kind::malformed,
                               "backend response has no message content");
        }
        content = message["content"].get<std::string>();
    } else {
        auto blocks = parsed.find("content");
        if (blocks == parsed.end() || !blocks->is_array() || blocks->empty() ||
            !(*blocks)[0].contains("text") || !(*blocks)[0]["text"].is_string()) {
            throw BackendError(BackendError::Kind::malformed,
                               "backend response has no content blocks");
        }
        content = (*blocks)[0]["text"].get<std::string>();
    }
    if (content.empty()) {
        throw BackendError(BackendError::Kind::malformed,
                           "backend returned an empty assistant message");
    }
    return {Role::assistant, content};
}

BackendHandle::BackendHandle(BackendSpec spec, HttpTransport transport)
    : spec_(std::move(spec)), transport_(std::move(transport)) {
    spec_.validate();
    if (spec_.model_id.empty()) spec_.model_id = spec_.name;
    if (spec_.kind == BackendKind::mock) {
        fixture_ = load_mock_fixture(spec_.fixture_path);
    } else if (!transport_) {
        transport_ = default_transport;
    }
    local_limit_ = std::make_unique<std::counting_semaphore<>>(spec_.max_in_flight);
}

ChatMessage BackendHandle::complete(const CompletionRequest& request) {
    request.validate();
    SemaphoreGuard global(global_limit_.get());
    SemaphoreGuard local(local_limit_.get());
    calls_.fetch_add(1);

    if (spec_.kind == BackendKind::mock) {
        return mock_complete(fixture_, request);
    }
    return complete_http(request);
}

ChatMessage BackendHandle::complete_http(const CompletionRequest& request) {
    const char* secret = std::getenv(spec_.credential_env.c_str());
    if (!secret || *secret == '\0') {
        throw BackendError(BackendError::Kind::auth, "backend \"" + spec_.name +
                                                         "\": environment variable " +
                                                         spec_.credential_env + " is not set");
    }

    const WireShape shape = wire_shape_for(spec_.name);
    const std::string body = encode_request(shape, request).dump();
    const std::string auth_name =
        shape == WireShape::anthropic_messages ? "x-api-key" : "Authorization";
    const std::string auth_value = shape == WireShape::anthropic_messages
                                       ? std::string(secret)
                                       : "Bearer " + std::string(secret);

    std::string last_failure;
    for (int attempt = 0; attempt < spec_.retry.max_attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(retry_delay(spec_.retry, attempt - 1, jitter_draw()));
        }
        HttpResponse response = transport_(spec_.endpoint, auth_name, auth_value, body);
        if (response.status == 200) {
            return decode_response(shape, response.body);
        }
        if (response.status == 401 || response.status == 403) {
            throw BackendError(BackendError::Kind::auth,
                               "backend \"" + spec_.name + "\": authentication failed (HTTP " +
                                   std::to_string(response.status) + ")");
        }
        if (!is_transient_status(response.status)) {
            throw BackendError(BackendError::Kind::transport,
                               "backend \"" + spec_.name + "\": HTTP " +
                                   std::to_string(response.status));
        }
        last_failure = response.status == 0 ? response.body
                                            : "HTTP " + std::to_string(response.status);
    }
    throw BackendError(BackendError::Kind::transport,
                       "backend \"" + spec_.name + "\": transient failure after " +
                           std::to_string(spec_.retry.max_attempts) + " attempts (" +
                           last_failure + ")");
}

}  // namespace mineqa
