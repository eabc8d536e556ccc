#pragma once

// JSON-over-HTTP surface of the engine. Routing is a plain function so it can be exercised
// without sockets; serve()/start() bind it to a cpp-httplib server.

#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "moralgraph/engine.hpp"

namespace moralgraph {

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

class Api {
public:
    explicit Api(Engine& engine);
    ~Api();
    Api(const Api&) = delete;
    Api& operator=(const Api&) = delete;

    /// Routes one request. Errors map to 400 (bad input), 404, 409 (precondition), 429 (token
    /// budget) and 502 (model unavailable); the body is {"error": ..., "problems": [...]}.
    ApiResponse handle(std::string_view method, std::string_view path, const std::map<std::string, std::string>& query,
                       std::string_view body);

    /// Blocks until stop().
    void serve(const std::string& host, int port);
    /// Listens on a background thread; returns the bound port (port 0 picks a free one).
    int start(const std::string& host, int port = 0);
    void stop();

private:
    struct Server;
    Engine& engine_;
    std::unique_ptr<Server> server_;
};

}  // namespace moralgraph
