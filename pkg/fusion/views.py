from rest_framework import viewsets
from rest_framework.permissions import AllowAny
from .models import AgentRecord, AlignmentRecord, EvaluationRecord
from .serializers import AgentRecordSerializer, AlignmentRecordSerializer, EvaluationRecordSerializer


class AgentRecordViewSet(viewsets.ReadOnlyModelViewSet):
    """
    ViewSet for reading agent sessions.
    Agents are looked up by their wire agent id.
    """
    queryset = AgentRecord.objects.all()
    serializer_class = AgentRecordSerializer
    permission_classes = [AllowAny]
    lookup_field = 'agent_id'

    def get_queryset(self):
        """Filter by ?state=unaligned|aligning|aligned"""
        queryset = super().get_queryset()
        state = self.request.query_params.get('state')
        if state:
            queryset = queryset.filter(state=state)
        return queryset


class AlignmentRecordViewSet(viewsets.ReadOnlyModelViewSet):
    """
    ViewSet for reading alignment reports, newest first.
    """
    queryset = AlignmentRecord.objects.select_related('agent')
    serializer_class = AlignmentRecordSerializer
    permission_classes = [AllowAny]

    def get_queryset(self):
        """Filter by ?agent=<id> and ?accepted=true|false"""
        queryset = super().get_queryset()
        agent = self.request.query_params.get('agent')
        if agent is not None:
            queryset = queryset.filter(agent__agent_id=agent)
        accepted = self.request.query_params.get('accepted')
        if accepted is not None:
            queryset = queryset.filter(accepted=accepted.lower() in ('1', 'true', 'yes'))
        return queryset


class EvaluationRecordViewSet(viewsets.ReadOnlyModelViewSet):
    queryset = EvaluationRecord.objects.all()
    serializer_class = EvaluationRecordSerializer
    permission_classes = [AllowAny]

    def get_queryset(self):
        queryset = super().get_queryset()
        for param in ('run', 'mode'):
            value = self.request.query_params.get(param)
            if value:
                queryset = queryset.filter(**{param: value})
        return queryset
