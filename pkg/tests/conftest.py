import pytest

from seqdistill.filters import MarkerTable
from seqdistill.mockmodel import MockGateway, blend_model, structured_model

# single-character marker table matching the structured mock's output shape
MOCK_MARKERS = MarkerTable(
    analysis_start="[",
    analysis_end="]",
    final_start="{",
    final_end="}",
    tool_markers=("!",),
)


@pytest.fixture(scope="session")
def mock_trio():
    teacher = structured_model("mock-teacher", seed=11, tool_rate=0.015)
    student = structured_model(
        "mock-student",
        seed=29,
        tool_rate=0.004,
        sentence_rate=0.12,
        close_analysis_rate=0.015,
        close_final_rate=0.05,
        close_after_sentence_rate=0.10,
    )
    distilled = blend_model("mock-distilled", teacher, student, 0.7)
    return teacher, student, distilled


@pytest.fixture(scope="session")
def mock_gateway(mock_trio):
    teacher, student, distilled = mock_trio
    return MockGateway(
        {"mock-teacher": teacher, "mock-student": student, "mock-distilled": distilled}
    )
