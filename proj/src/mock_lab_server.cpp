#include "cfope/mock_lab_server.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "cfope/cohort_sim.hpp"
#include "cfope/format.hpp"

namespace cfope {

using nlohmann::json;

namespace {

// Extracts the number that follows `marker` up to the next space.
double number_after(const std::string& text, const std::string& marker) {
    const std::size_t at = text.find(marker);
    if (at == std::string::npos)
        throw std::invalid_argument("mock server: prompt lacks marker: " + marker);
    const std::size_t start = at + marker.size();
    std::size_t end = start;
    while (end < text.size() && text[end] != ' ' && text[end] != '\n') ++end;
    return parse_double(std::string_view(text).substr(start, end - start));
}

}  // namespace

double MockLabServer::scripted_lab(Task task, double baseline_lab, double dose_meq, double slope) {
    const double raw = baseline_lab + slope * dose_meq;
    const double clamped = physiologic_range(task).apply(raw);
    return std::round(clamped * 100.0) / 100.0;
}

struct MockLabServer::Impl {
    Task task;
    Options options;
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> requests{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};

    Impl(Task task_, Options options_) : task(task_), options(options_) {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                   httplib::Response& res) { handle(req, res); });
        port = server.bind_to_any_port("127.0.0.1");
        if (port <= 0) throw std::runtime_error("mock server: failed to bind a port");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    void handle(const httplib::Request& req, httplib::Response& res) {
        const int current = in_flight.fetch_add(1) + 1;
        int prev_peak = peak.load();
        while (current > prev_peak && !peak.compare_exchange_weak(prev_peak, current)) {
        }
        const int count = requests.fetch_add(1) + 1;

        if (options.latency_ms > 0.0) {
            std::this_thread::sleep_for(
                std::chrono::microseconds(static_cast<long>(options.latency_ms * 1000.0)));
        }

        if (count <= options.fail_first_n) {
            res.status = options.failure_status;
            res.set_content("{\"error\":\"scripted failure\"}", "application/json");
            in_flight.fetch_sub(1);
            return;
        }
        if (options.garble_responses) {
            res.status = 200;
            res.set_content("no structured output here", "text/plain");
            in_flight.fetch_sub(1);
            return;
        }

        try {
            const json body = json::parse(req.body);
            const std::string prompt =
                body.at("messages").at(0).at("content").get<std::string>();
            double lab;
            if (options.use_fixed_lab) {
                lab = options.fixed_lab;
            } else {
                const std::string lab_marker = task == Task::Potassium
                                                   ? "- Baseline serum potassium: "
                                                   : "- Baseline serum sodium: ";
                const double baseline = number_after(prompt, lab_marker);
                const double dose = number_after(prompt, " dose of ");
                lab = scripted_lab(task, baseline, dose, options.slope);
            }
            json payload;
            payload["predicted_lab"] = lab;
            payload["justification"] =
                "Scripted projection from the baseline lab and the requested dose.";
            const std::string content = "Here is the assessment.\n```json\n" + payload.dump() +
                                        "\n```\n";
            json envelope;
            envelope["id"] = "mock-" + std::to_string(count);
            envelope["object"] = "chat.completion";
            envelope["model"] = body.value("model", "mock-lab");
            envelope["choices"] =
                json::array({{{"index", 0},
                              {"message", {{"role", "assistant"}, {"content", content}}},
                              {"finish_reason", "stop"}}});
            res.status = 200;
            res.set_content(envelope.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(std::string("{\"error\":\"") + e.what() + "\"}", "application/json");
        }
        in_flight.fetch_sub(1);
    }

    void stop() {
        server.stop();
        if (thread.joinable()) thread.join();
    }

    ~Impl() { stop(); }
};

MockLabServer::MockLabServer(Task task, Options options)
    : impl_(std::make_unique<Impl>(task, options)) {}

MockLabServer::~MockLabServer() = default;

std::string MockLabServer::base_url() const {
    return "http://127.0.0.1:" + std::to_string(impl_->port);
}

int MockLabServer::port() const { return impl_->port; }
int MockLabServer::request_count() const { return impl_->requests.load(); }
int MockLabServer::peak_concurrency() const { return impl_->peak.load(); }
void MockLabServer::stop() { impl_->stop(); }

}  // namespace cfope
