#include "mals/cli.hpp"

int main(int argc, char** argv) {
    return mals::cli::run(argc, argv);
}
