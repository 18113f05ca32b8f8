#include "ctreg/cli.hpp"

int main(int argc, char** argv)
{
    return ctreg::cli_main(argc, argv);
}
