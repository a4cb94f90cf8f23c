#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "mineqa/jsonl.hpp"

namespace mineqa {

enum class Role { system, user, assistant };

std::string to_string(Role role);
Role role_from_string(const std::string& s);  // throws ValidationError

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

// One chat-completion call. `validate` enforces: messages non-empty, last
// message is a user turn, user/assistant contents non-empty, temperature in
// [0, 2], max_tokens positive.
struct CompletionRequest {
    std::string model_id;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::optional<long long> seed;

    void validate() const;  // throws ValidationError
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{200};
    std::chrono::milliseconds max_delay{5000};
};

enum class BackendKind { http, mock };

struct BackendSpec {
    std::string name;
    BackendKind kind = BackendKind::mock;
    std::string model_id;        // sent on the wire; defaults to name when empty
    std::string endpoint;        // http kind only
    std::string credential_env;  // http kind only; env var holding the secret
    int max_in_flight = 4;
    RetryPolicy retry;
    std::filesystem::path fixture_path;  // mock kind only

    void validate() const;  // throws ValidationError
};

enum class MockMatch { exact, substring };
enum class MockFallback { echo, error };

struct MockRule {
    MockMatch match = MockMatch::substring;
    std::string pattern;   // applied to the final user message
    std::string response;
};

// Scripted responses for the deterministic mock backend. First matching rule
// wins; exact matches compare after trimming trailing whitespace only.
struct MockFixture {
    std::vector<MockRule> rules;
    MockFallback fallback = MockFallback::echo;

    void validate() const;  // rules may be empty only when fallback = echo
};

MockFixture load_mock_fixture(const std::filesystem::path& path);

// Pure function of (fixture, request); repeated calls are byte-identical.
// The echo fallback returns "ECHO:" + sha256 of the final user message.
ChatMessage mock_complete(const MockFixture& fixture, const CompletionRequest& request);

std::string echo_response_content(const std::string& final_user_message);

// Exponential backoff with bounded jitter. `attempt` is 0-based (delay before
// retry attempt+2); `jitter01` in [0,1] scales the jitter term. The resulting
// sequence is non-decreasing in `attempt` for any jitter draws and is capped
// at policy.max_delay.
std::chrono::milliseconds retry_delay(const RetryPolicy& policy, int attempt, double jitter01);

// Minimal HTTP transport seam so retry/auth behavior is testable without a
// network. The default implementation speaks plain HTTP via httplib.
struct HttpResponse {
    int status = 0;
    std::string body;
};
using HttpTransport =
    std::function<HttpResponse(const std::string& url, const std::string& auth_header_name,
                               const std::string& auth_header_value, const std::string& body)>;

// Vendor wire adapters. Backend names containing "claude" use the anthropic
// messages shape; everything else uses the openai chat-completions shape.
enum class WireShape { openai_chat, anthropic_messages };
WireShape wire_shape_for(const std::string& backend_name);
jsonl::Json encode_request(WireShape shape, const CompletionRequest& request);
ChatMessage decode_response(WireShape shape, const std::string& body);  // throws BackendError

// A shareable handle over one configured backend: owns the loaded mock
// fixture or HTTP transport plus the per-backend in-flight limiter.
class BackendHandle {
public:
    explicit BackendHandle(BackendSpec spec, HttpTransport transport = {});

    // Issues one completion, retrying transient transport failures per the
    // retry policy. Returns exactly one assistant message, content verbatim.
    ChatMessage complete(const CompletionRequest& request);

    const BackendSpec& spec() const { return spec_; }
    long long calls() const { return calls_.load(); }

    // Optional cap shared across backends; acquired before the local cap.
    void set_global_limiter(std::shared_ptr<std::counting_semaphore<>> limiter) {
        global_limit_ = std::move(limiter);
    }

private:
    ChatMessage complete_http(const CompletionRequest& request);

    BackendSpec spec_;
    MockFixture fixture_;
    HttpTransport transport_;
    std::unique_ptr<std::counting_semaphore<>> local_limit_;
    std::shared_ptr<std::counting_semaphore<>> global_limit_;
    std::atomic<long long> calls_{0};
};

}  // namespace mineqa
