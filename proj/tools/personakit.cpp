#include <string>
#include <vector>

#include "personakit/cli.hpp"

int main(int argc, char** argv) {
    return personakit::cli::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
