from typing import NamedTuple


class CliCommand(NamedTuple):
    command: str
    description: str


cli_commands = [
    CliCommand(command='verify', description='Run the geometry or signal property suite'),
    CliCommand(command='gradcheck', description='Check network gradients against finite differences'),
    CliCommand(command='train', description='Train one vector field on a toy task'),
    CliCommand(command='sample', description='Euler-sample a trained checkpoint'),
    CliCommand(command='compare', description='LP vs OT over seeds and step budgets'),
    CliCommand(command='ablate-vcs', description='{LP, OT} x {VCS off, on}'),
    CliCommand(command='ablate-blocks', description='Mode per block on the spectrogram task'),
    CliCommand(command='history', description='List recorded runs'),
]

COMMAND_HELP = {c.command: c.description for c in cli_commands}
